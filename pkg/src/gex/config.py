"""Gateway configuration: one YAML file wiring models, profiles, solver
parameters, the scene, and service settings.

References to other documents accept either `builtin:<name>` (packaged
fixtures) or a filesystem path resolved relative to the config file.
Everything is loaded and validated eagerly so a bad setup fails at
startup, not mid-session.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError, ModelError
from .kinematics import HandModel, builtin_model, load_model
from .retarget import DEFAULT_KEY_VECTORS, KeyVectorSpec, RetargetConfig
from .teleop import ContactDetector, ImpedanceParams, SceneObject, builtin_scene, load_scene
from .virtual_bus import ServoProfile, builtin_profile, load_profile


@dataclass
class GatewayConfig:
    hand_model: HandModel
    glove_model: HandModel
    hand_profile: ServoProfile
    glove_profile: ServoProfile
    retarget: RetargetConfig
    detector: ContactDetector
    impedance: ImpedanceParams
    scene: SceneObject | None
    port: int = 8765
    broadcast_hz: float = 30.0
    rate_hz: float = 100.0
    substeps: int = 10


def _resolve(ref: str, base: Path, loader, builtin_loader):
    if ref.startswith("builtin:"):
        return builtin_loader(ref.split(":", 1)[1])
    path = Path(ref)
    if not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ConfigError(f"referenced file does not exist: {path}")
    return loader(path.read_text(encoding="utf-8"))


def _specs_from(doc: list) -> tuple[KeyVectorSpec, ...]:
    out = []
    for entry in doc:
        try:
            out.append(
                KeyVectorSpec(
                    kind=entry["kind"],
                    start=entry.get("from", "palm"),
                    end=entry["to"],
                    weight=float(entry.get("weight", 1.0)),
                )
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"bad key-vector entry {entry!r}: {e}") from e
    return tuple(out)


def config_from_dict(doc: dict, base: Path) -> GatewayConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    models = doc.get("models", {})
    profiles = doc.get("profiles", {})
    try:
        hand_model = _resolve(models.get("hand", "builtin:gx11"), base, load_model, builtin_model)
        glove_model = _resolve(models.get("glove", "builtin:ex12"), base, load_model, builtin_model)
        hand_profile = _resolve(profiles.get("hand", "builtin:m288"), base, load_profile, builtin_profile)
        glove_profile = _resolve(profiles.get("glove", "builtin:m077"), base, load_profile, builtin_profile)

        rdoc = dict(doc.get("retarget", {}))
        specs = DEFAULT_KEY_VECTORS if "specs" not in rdoc else _specs_from(rdoc.pop("specs"))
        retarget = RetargetConfig(specs=specs, **rdoc)
        retarget.validated_for(hand_model)
        retarget.validated_for(glove_model)

        detector = ContactDetector(**doc.get("detector", {}))
        impedance = ImpedanceParams(**doc.get("impedance", {}))
        if impedance.torque_cap > glove_profile.rated_torque:
            raise ConfigError(
                f"impedance torque_cap {impedance.torque_cap} exceeds glove "
                f"servo rating {glove_profile.rated_torque}"
            )

        scene_ref = doc.get("scene")
        scene = None
        if scene_ref:
            scene = _resolve(scene_ref, base, load_scene, builtin_scene)

        service = doc.get("service", {})
        control = doc.get("control", {})
        cfg = GatewayConfig(
            hand_model=hand_model,
            glove_model=glove_model,
            hand_profile=hand_profile,
            glove_profile=glove_profile,
            retarget=retarget,
            detector=detector,
            impedance=impedance,
            scene=scene,
            port=int(service.get("port", 8765)),
            broadcast_hz=float(service.get("broadcast_hz", 30.0)),
            rate_hz=float(control.get("rate_hz", 100.0)),
            substeps=int(control.get("substeps", 10)),
        )
    except (ModelError, TypeError) as e:
        raise ConfigError(f"invalid gateway config: {e}") from e
    if cfg.rate_hz <= 0 or cfg.broadcast_hz <= 0 or cfg.substeps < 0:
        raise ConfigError("rates must be positive and substeps >= 0")
    if not 0 < cfg.port < 65536:
        raise ConfigError(f"port {cfg.port} out of range")
    return cfg


def load_config(path) -> GatewayConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from e
    return config_from_dict(doc, path.parent)


def default_config() -> GatewayConfig:
    text = (resources.files("gex.data") / "gateway.yaml").read_text(encoding="utf-8")
    return config_from_dict(yaml.safe_load(text), Path("."))
