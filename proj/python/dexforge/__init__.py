"""Dexterous-grasp dataset synthesis and evaluation engine.

The heavy lifting lives in the compiled extension ``dexforge._core``. When the
package is installed (scikit-build-core wheel) the extension sits inside the
package; for in-tree development builds, place the built ``_core`` module on
``sys.path`` (e.g. ``PYTHONPATH=build:python``).
"""

try:
    from ._core import *  # noqa: F401,F403  (packaged layout)
    from . import _core as core  # noqa: F401
except ImportError:  # in-tree layout: _core.so next to the build tree
    from _core import *  # type: ignore  # noqa: F401,F403
    import _core as core  # type: ignore  # noqa: F401

__version__ = "0.1.0"
