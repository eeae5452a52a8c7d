import pytest

from narytd import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compilation happens here, not inside timed tests
    kernels.warmup()
