# src/schemas/flow_models.py
"""
src/schemas/flow_models.py

Pydantic models describing a Ricci-flow background and the time window
[delta, T] on which the lab works.

Reverse time tau = calT - t with calT = T + delta; the tau-range is
[delta, T].
"""

import math
from typing import Annotated, Literal, Union

from pydantic import BaseModel, Field, computed_field, model_validator


class ShrinkingSphere(BaseModel):
    """Round sphere with metric c(t) times the unit metric, c(t) = c0 - 2(n-1)t."""
    kind: Literal["shrinking_sphere"] = "shrinking_sphere"
    c0: float = Field(1.0, gt=0, description="Initial scale of the round metric.")


class FlatTorus(BaseModel):
    """Static flat torus of side length L."""
    kind: Literal["flat_torus"] = "flat_torus"
    L: float = Field(2 * math.pi, gt=0, description="Side length of the torus.")


BackgroundSpec = Annotated[Union[ShrinkingSphere, FlatTorus], Field(discriminator="kind")]


class FlowConfig(BaseModel):
    """A background flow together with its observation window."""
    n: int = Field(2, ge=1, description="Spatial dimension of M.")
    T: float = Field(..., gt=0, description="Observation time.")
    delta: float = Field(..., gt=0, description="Boundary offset; tau ranges over [delta, T].")
    background: BackgroundSpec = Field(..., description="Closed-form background family.")

    @computed_field
    @property
    def calT(self) -> float:
        return self.T + self.delta

    @model_validator(mode="after")
    def _check_window(self) -> "FlowConfig":
        if not self.delta < self.T:
            raise ValueError("constraint violated: delta < T")
        if isinstance(self.background, ShrinkingSphere):
            if self.n < 2:
                raise ValueError("shrinking sphere needs n >= 2")
            limit = self.background.c0 / (2.0 * (self.n - 1))
            if not self.calT < limit:
                raise ValueError(
                    f"constraint violated: T + delta < c0/(2(n-1)) = {limit:g} (flow must exist on [0, calT])")
        return self

    @property
    def is_sphere(self) -> bool:
        return isinstance(self.background, ShrinkingSphere)

    @property
    def label(self) -> str:
        return "sphere" if self.is_sphere else "torus"

    @classmethod
    def default_sphere(cls, **overrides) -> "FlowConfig":
        data = {"n": 2, "T": 0.4, "delta": 0.02, "background": ShrinkingSphere()}
        data.update(overrides)
        return cls(**data)

    @classmethod
    def default_torus(cls, **overrides) -> "FlowConfig":
        data = {"n": 2, "T": 1.0, "delta": 0.05, "background": FlatTorus()}
        data.update(overrides)
        return cls(**data)


# src/schemas/flow_models.py
