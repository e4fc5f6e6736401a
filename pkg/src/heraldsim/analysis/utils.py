import math
from typing import NamedTuple

from pydantic import BaseModel


class Estimate(NamedTuple):
    value: float
    stderr: float


class ValueWithError(BaseModel):
    value: float
    stderr: float

    @classmethod
    def of(cls, estimate: Estimate) -> "ValueWithError":
        return cls(value=estimate.value, stderr=estimate.stderr)


def ratio_stderr(num: float, num_var: float, den: float, den_var: float) -> float:
    """First-order standard error of num/den for independent num and den."""
    if den == 0:
        return math.inf
    return math.sqrt(num_var / den**2 + num**2 * den_var / den**4)


def product_stderr(a: float, a_err: float, b: float, b_err: float) -> float:
    return math.sqrt((a_err * b) ** 2 + (a * b_err) ** 2)
