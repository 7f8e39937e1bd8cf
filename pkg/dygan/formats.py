from typing import Union

Number = Union[str, float, int]


def comma_format(number: Number, places: int = 2) -> str:
    """
    Group thousands with commas.
    eg: `137752 -> '137,752'
        1234.5678 -> '1,234.57'
        '262144' -> '262,144'

    :param number: an int, a float or a numeric str
    :param places: decimal places kept for non-integers
    :return: the grouped string
    """
    if isinstance(number, str):
        try:
            number = int(number)
        except ValueError:
            number = float(number)

    if isinstance(number, int):
        return f"{number:,}"
    return f"{number:,.{places}f}"


def format_duration(seconds: float) -> str:
    """Render a wall time in the largest unit that keeps it above 1 (``850 us``, ``12.40 ms``, ``1.25 s``)."""
    if seconds >= 1.0:
        return f"{seconds:.2f} s"
    if seconds >= 1e-3:
        return f"{seconds * 1e3:.2f} ms"
    return f"{seconds * 1e6:.0f} us"


def format_error(value: float) -> str:
    return f"{value:.2e}"
