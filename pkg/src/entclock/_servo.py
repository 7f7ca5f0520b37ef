"""Servo-loop backend selection.

The compiled extension is used when it was built; otherwise, or when
``ENTCLOCK_PURE_PYTHON=1`` is set, the pure-Python twin is used.
"""

import os

from . import _servo_py

PURE_ENV = "ENTCLOCK_PURE_PYTHON"

if os.environ.get(PURE_ENV, "") not in ("", "0"):
    run_servo_loop = _servo_py.run_servo_loop
    BACKEND = "python"
else:
    try:
        from ._servo_ext import run_servo_loop
        BACKEND = "cython"
    except ImportError:  # extension not built
        run_servo_loop = _servo_py.run_servo_loop
        BACKEND = "python"

BACKENDS = {"python": _servo_py.run_servo_loop}
try:
    from ._servo_ext import run_servo_loop as _compiled

    BACKENDS["cython"] = _compiled
except ImportError:
    pass
