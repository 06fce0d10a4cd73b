import sys, pathlib

# Tests import spinamp and spinamp_cli straight from the project root.
sys.path.append(str(pathlib.Path(__file__).parent.parent))
