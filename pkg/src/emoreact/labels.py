"""Canonical class orders shared by every module."""

REACTIONS = ("HAHA", "SAD", "ANGRY", "LOVE", "WOW")
EMOTIONS = ("anger", "disgust", "fear", "happiness", "sadness", "surprise")

REACTION = "reaction"
EMOTION = "emotion"

CLASSES = {REACTION: REACTIONS, EMOTION: EMOTIONS}

REACTION_INDEX = {name: i for i, name in enumerate(REACTIONS)}
EMOTION_INDEX = {name: i for i, name in enumerate(EMOTIONS)}

# hand mappings used by the artificial-label baseline
REACTION_TO_EMOTION = {
    "LOVE": "happiness",
    "WOW": "surprise",
    "HAHA": "happiness",
    "SAD": "sadness",
    "ANGRY": "anger",
}
EMOTION_TO_REACTION = {
    "anger": "ANGRY",
    "disgust": "ANGRY",
    "fear": "WOW",
    "happiness": "HAHA",
    "sadness": "SAD",
    "surprise": "WOW",
}


def class_names(task: str) -> tuple:
    try:
        return CLASSES[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}") from None
