import hashlib
import json
import os
import os.path
import tempfile
from typing import Any, Tuple

from filelock import FileLock
import numpy as np
import shortuuid
import toml

LOCK_FOLDER_ENV = 'COVFIT_LOCK_FOLDER'


def read_toml(path):
    with open(path, encoding='utf-8') as fin:
        return toml.loads(fin.read())


def read_json(path):
    with open(path, encoding='utf-8') as fin:
        return json.loads(fin.read())


def dumps_json(struct: Any) -> str:
    # Python floats serialize with the shortest repr that round-trips exactly.
    return json.dumps(struct, indent=2, sort_keys=False, allow_nan=False) + '\n'


def lock_folder() -> str:
    folder = os.getenv(LOCK_FOLDER_ENV) or os.path.join(tempfile.gettempdir(), 'covfit-locks')
    os.makedirs(folder, exist_ok=True)
    return folder


def lock_path_for(file_path: str) -> str:
    # One lock per absolute output path, all kept in the lock folder.
    digest = hashlib.sha256(os.path.abspath(file_path).encode('utf-8')).hexdigest()[:32]
    return os.path.join(lock_folder(), f'{digest}.lock')


def locked_write_file(file_path: str, text: str, timeout: float = -1) -> bool:
    '''Write through a temporary file and an atomic rename, guarded by lock_path_for(file_path).
    '''
    try:
        with FileLock(lock_path_for(file_path), timeout=timeout):
            tmp_path = f'{file_path}.tmp.{shortuuid.uuid()}'
            try:
                with open(tmp_path, 'w', encoding='utf-8', newline='') as fout:
                    fout.write(text)
                os.replace(tmp_path, file_path)
            finally:
                if os.path.exists(tmp_path):
                    os.remove(tmp_path)
    except TimeoutError:
        return False
    return True


def write_json(path: str, struct: Any) -> None:
    if not locked_write_file(path, dumps_json(struct)):
        raise TimeoutError(f'Lock acquire timeout on {path}.')


def format_number(value: float) -> str:
    # 17 significant digits round-trip any double.
    return format(float(value), '.17g')


def encode_complex_cell(value: complex, is_real: bool) -> str:
    if is_real:
        return format_number(np.real(value))
    return f'{format_number(np.real(value))}:{format_number(np.imag(value))}'


def decode_complex_cell(cell: str) -> complex:
    if ':' in cell:
        re_text, im_text = cell.split(':', 1)
        return complex(float(re_text), float(im_text))
    return complex(float(cell), 0.0)


def complex_to_pair(value: complex, is_real: bool) -> Tuple[float, ...]:
    if is_real:
        return (float(np.real(value)),)
    return (float(np.real(value)), float(np.imag(value)))


def pair_to_complex(pair) -> complex:
    if len(pair) == 1:
        return complex(pair[0], 0.0)
    if len(pair) == 2:
        return complex(pair[0], pair[1])
    raise ValueError(f'Expect [re] or [re, im], got {pair}.')


def ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
