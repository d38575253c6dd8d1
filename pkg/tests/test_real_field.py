from covfit_testkit import FieldTestKit


class RealFieldTestKit(FieldTestKit):
    is_real = True
    seed_base = 1000


RealFieldTestKit.pytest_injection()
