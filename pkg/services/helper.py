import secrets
import time

_DIGITS = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def base36_encode(num):
    """Non-negative integer in upper-case base 36."""
    if not isinstance(num, int):
        raise TypeError("number must be an integer")
    if num < 0:
        raise ValueError("number must be non-negative")
    result = ""
    while num > 0:
        num, remainder = divmod(num, 36)
        result = _DIGITS[remainder] + result
    return result or "0"


def generate_unique_id():
    """Millisecond timestamp in base 36 plus six random base-36 digits; sorts by creation time."""
    stamp = base36_encode(int(time.time() * 1000))
    tail = "".join(secrets.choice(_DIGITS) for _ in range(6))
    return f"{stamp}{tail}"


def run_id(subcommand):
    """Directory-safe run id: '<subcommand>-<unique id>'."""
    return f"{subcommand}-{generate_unique_id()}"


def parse_float_list(text):
    """'0.5, 1,2' -> [0.5, 1.0, 2.0]; empty items are dropped."""
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(" ", "").split(",") if x]
