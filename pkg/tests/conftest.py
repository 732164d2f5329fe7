import pytest
import os
import sys
from pathlib import Path

# --- 0. Add project root to sys.path for module discovery ---
# This ensures 'models', 'utils', etc. can be imported in test files
PROJECT_ROOT = Path(__file__).parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

# --- 1. Keep the environment out of test runs ---
for key in ("LRC_THREADS", "LRC_OUT_DIR", "LRC_LOG_JSON"):
    os.environ.pop(key, None)
os.environ.setdefault("LRC_LOG_LEVEL", "WARNING")

DEGREE8_MAP = "8*x + 0.0025*(sin(16*pi*x) + sin(32*pi*x)/4)"


# --- 2. Maps ---

@pytest.fixture(scope="session")
def doubling_model():
    from models.dynamics import MapModel
    from models.symbolic import X
    return MapModel.from_expression(2 * X, degree=2, name="doubling")


@pytest.fixture(scope="session")
def degree8_model():
    from models.dynamics import MapModel
    from models.symbolic import X, parse_expression
    return MapModel.from_expression(parse_expression(DEGREE8_MAP, (X,)), degree=8,
                                    name="degree8")


@pytest.fixture(scope="session")
def doubling_bounds(doubling_model):
    from models.dynamics import certify_expanding
    return certify_expanding(doubling_model, depth=8)


@pytest.fixture(scope="session")
def doubling_ly(doubling_bounds):
    from models.certificates import ly_constants
    return ly_constants(doubling_bounds)


# --- 3. Operators ---

@pytest.fixture(scope="session")
def doubling_c0_1024(doubling_model):
    """c0 operator fine enough for a contracting certificate."""
    from models.operator import KIND_C0, assemble
    from models.partition import PartitionScheme
    return assemble(doubling_model, PartitionScheme(1024), KIND_C0)


@pytest.fixture(scope="session")
def doubling_certificate(doubling_c0_1024, doubling_ly):
    from models.certificates import equilibrium
    return equilibrium(doubling_c0_1024, doubling_ly, cap=16, rho_target=0.05)


@pytest.fixture
def run_dir(tmp_path):
    return tmp_path / "run"
