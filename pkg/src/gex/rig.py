"""Virtual hardware-in-the-loop rig: two buses, two devices, one clock.

Builds the whole bench in memory: a hand bus with M288-class servos, a
glove bus with M077-class servos, SDK handles wired to them through
`mem:` transports, and a BusClock installed as both handles' idle hook
so blocking SDK calls advance simulated time deterministically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .kinematics import HandModel, builtin_model
from .sdk import Glove, Hand
from .virtual_bus import (
    BusClock,
    BusEndpoint,
    ServoProfile,
    VirtualBus,
    builtin_profile,
    release_mem,
    serve_mem,
)

_COUNTER = itertools.count()


def _attach_model(bus: VirtualBus, model: HandModel, profile: ServoProfile) -> None:
    rad_per_tick = 2.0 * math.pi / profile.ticks_per_rev
    for joint in model.joints:
        home_ticks = joint.zero_tick + round(joint.home_deg * 4096 / 360.0)
        bus.attach(joint.motor_id, profile, theta=home_ticks * rad_per_tick)


@dataclass
class VirtualRig:
    name: str
    hand_bus: VirtualBus
    glove_bus: VirtualBus
    hand_endpoint: BusEndpoint
    glove_endpoint: BusEndpoint
    clock: BusClock
    hand: Hand
    glove: Glove

    def close(self) -> None:
        release_mem(f"{self.name}-hand")
        release_mem(f"{self.name}-glove")

    def __enter__(self) -> "VirtualRig":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def build_rig(
    hand_model: HandModel | None = None,
    glove_model: HandModel | None = None,
    hand_profile: ServoProfile | None = None,
    glove_profile: ServoProfile | None = None,
    name: str | None = None,
) -> VirtualRig:
    """Assemble a fresh virtual bench; servos come up at their home pose."""
    hand_model = hand_model or builtin_model("gx11")
    glove_model = glove_model or builtin_model("ex12")
    hand_profile = hand_profile or builtin_profile("m288")
    glove_profile = glove_profile or builtin_profile("m077")
    name = name or f"rig{next(_COUNTER)}"

    hand_bus, glove_bus = VirtualBus(), VirtualBus()
    _attach_model(hand_bus, hand_model, hand_profile)
    _attach_model(glove_bus, glove_model, glove_profile)
    hand_endpoint = serve_mem(hand_bus, f"{name}-hand")
    glove_endpoint = serve_mem(glove_bus, f"{name}-glove")

    clock = BusClock([hand_bus, glove_bus])
    hand = Hand(f"mem:{name}-hand", model=hand_model)
    glove = Glove(f"mem:{name}-glove", model=glove_model)
    hand.idle = clock.advance
    glove.idle = clock.advance
    return VirtualRig(
        name=name,
        hand_bus=hand_bus,
        glove_bus=glove_bus,
        hand_endpoint=hand_endpoint,
        glove_endpoint=glove_endpoint,
        clock=clock,
        hand=hand,
        glove=glove,
    )
