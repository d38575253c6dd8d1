from covfit_testkit import FieldTestKit


class ComplexFieldTestKit(FieldTestKit):
    is_real = False
    seed_base = 2000


ComplexFieldTestKit.pytest_injection()
