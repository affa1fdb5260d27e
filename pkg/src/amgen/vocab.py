"""Frozen enumerations shared by data generation, captions and metrics."""

from __future__ import annotations

from dataclasses import dataclass


class ConfigurationError(ValueError):
    """Unknown identifier or invalid configuration value."""


REGIONS = ("head", "hair", "neck", "torso", "upper_arm", "forearm", "hand", "upper_leg", "lower_leg", "foot")

SKIN = (0.86, 0.66, 0.52)


@dataclass(frozen=True)
class Appearance:
    phrase: str
    colors: dict  # region name -> rgb


def _look(phrase, **overrides):
    base = {
        "head": SKIN, "neck": SKIN, "forearm": SKIN, "hand": SKIN,
        "hair": (0.12, 0.08, 0.05), "foot": (0.1, 0.1, 0.1),
    }
    base.update(overrides)
    return Appearance(phrase, base)


APPEARANCES = {
    "man_white_shirt": _look(
        "a man in a white shirt",
        torso=(0.93, 0.93, 0.9), upper_arm=(0.93, 0.93, 0.9),
        upper_leg=(0.16, 0.2, 0.45), lower_leg=(0.16, 0.2, 0.45),
    ),
    "woman_yellow_dress": _look(
        "a woman in a yellow dress",
        torso=(0.96, 0.8, 0.16), upper_leg=(0.96, 0.8, 0.16),
        upper_arm=SKIN, lower_leg=SKIN, hair=(0.35, 0.2, 0.1), foot=(0.7, 0.1, 0.1),
    ),
    "man_blue_suit": _look(
        "a man in a blue suit",
        torso=(0.12, 0.17, 0.42), upper_arm=(0.12, 0.17, 0.42), forearm=(0.12, 0.17, 0.42),
        upper_leg=(0.12, 0.17, 0.42), lower_leg=(0.12, 0.17, 0.42),
    ),
    "woman_red_top": _look(
        "a woman in a red top",
        torso=(0.85, 0.12, 0.14), upper_arm=(0.85, 0.12, 0.14),
        upper_leg=(0.1, 0.1, 0.12), lower_leg=(0.1, 0.1, 0.12), hair=(0.05, 0.04, 0.03),
    ),
    "man_green_jacket": _look(
        "a man in a green jacket",
        torso=(0.2, 0.5, 0.25), upper_arm=(0.2, 0.5, 0.25), forearm=(0.2, 0.5, 0.25),
        upper_leg=(0.45, 0.38, 0.3), lower_leg=(0.45, 0.38, 0.3),
    ),
}

ACTIONS = {
    "walk": "walking",
    "jump": "jumping",
    "wave": "waving",
    "box": "boxing",
    "squat": "squatting",
    "spin": "spinning",
    "latin_dance": "dancing",
}

SCENES = {
    "park": "in a park",
    "beach": "on a beach",
    "street": "on a street",
    "ballroom": "in a ballroom",
}


def _tokens() -> tuple[str, ...]:
    words = {"and", "a", "together"}
    for table in (ACTIONS, SCENES):
        for phrase in table.values():
            words.update(phrase.split())
    for look in APPEARANCES.values():
        words.update(look.phrase.split())
    return tuple(sorted(words))


TOKENS = _tokens()


def check(kind: str, value: str, table) -> None:
    if value not in table:
        raise ConfigurationError(f"unknown {kind} {value!r}; expected one of {sorted(table)}")
