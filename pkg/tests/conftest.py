import pytest

from e2m import kernels


@pytest.fixture(autouse=True)
def _restore_kernel_backend():
    """Tests may switch backends; always put the default back."""
    before = kernels.active_backend()
    yield
    kernels.set_backend(before)


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    kernels.set_backend(request.param)
    return request.param
