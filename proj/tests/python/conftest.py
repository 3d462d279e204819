import glob
import os
import sys

# Development layout: pick up the extension and the package from the cmake
# build tree when hodsm is not installed.
_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
for candidate in (os.path.join(_root, "build"), _root):
    if glob.glob(os.path.join(candidate, "_hodsm*.so")):
        sys.path.insert(0, candidate)
        break
sys.path.insert(0, os.path.join(_root, "python"))
