"""Exception hierarchy shared by all gazefatigue modules."""


class GazeFatigueError(Exception):
    """Base class for every error raised by this package."""


# ingest
class MissingColumn(GazeFatigueError):
    pass


class NonMonotoneTime(GazeFatigueError):
    pass


class EmptyRecording(GazeFatigueError):
    pass


class SampleRateMismatch(GazeFatigueError):
    pass


class MissingFatigueLabel(GazeFatigueError):
    pass


# preprocess
class ZeroVector(GazeFatigueError):
    pass


# models
class InvalidSpec(GazeFatigueError):
    pass


class ShapeMismatch(GazeFatigueError):
    pass


class NonFiniteInput(GazeFatigueError):
    pass


class NonFiniteGradient(GazeFatigueError):
    pass


# training
class NonFiniteLoss(GazeFatigueError):
    pass


class EmptyTrainingSet(GazeFatigueError):
    pass


class EmptyTestSet(GazeFatigueError):
    pass


class TooFewParticipants(GazeFatigueError):
    pass


# stats
class LengthMismatch(GazeFatigueError):
    pass


class DegenerateTest(GazeFatigueError):
    pass


class MissingSignal(GazeFatigueError):
    pass


class MissingRatings(GazeFatigueError):
    pass
