import pytest

from tbma.amp import available_backends


@pytest.fixture(params=available_backends())
def backend(request):
    """Run the test once per available detector implementation."""
    return request.param
