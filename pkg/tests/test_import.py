"""Test tblab."""

import tblab


def test_import() -> None:
    """Test that the package can be imported."""
    assert isinstance(tblab.__name__, str)
    assert tblab.__version__ == "0.1.0"
