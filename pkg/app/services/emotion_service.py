# app/services/emotion_service.py

import logging
import re
import threading
from typing import Optional, Protocol

import httpx
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConfigurationError, InputValidationError
from app.models.encoders import Vocabulary, split_words, tokenize
from app.schemas.emotion import EmotionRequest, EmotionResponse
from app.schemas.scene import Command, EmotionCategory

logger = logging.getLogger(__name__)

URGENT_WORDS = frozenset({"hurry", "now", "quick", "quickly", "asap", "immediately"})
URGENT_PHRASES = ("hold on", "right away")
# urgent only when they open a clause ("Stop here", "Wait, ..."), not in "bus stop"
URGENT_CLAUSE_HEADS = frozenset({"stop", "wait"})
COMMAND_VERBS = frozenset({
    "park", "turn", "stop", "pull", "drive", "drop", "follow", "pass", "slow",
    "make", "go", "take", "head", "keep", "move", "let", "change", "bring", "stay",
})
_CLAUSE_SPLIT = re.compile(r"[.,;!?]")
_LEADING_FILLERS = ("please",)


class EmotionClassifier(Protocol):
    def classify(self, text: str) -> EmotionCategory: ...


def _clause_heads(text: str) -> list[str]:
    heads = []
    for clause in _CLAUSE_SPLIT.split(text.lower()):
        words = [w for w in split_words(clause) if w.isalnum()]
        while words and words[0] in _LEADING_FILLERS:
            words = words[1:]
        if words:
            heads.append(words[0])
    return heads


class RuleBasedEmotionClassifier:
    """Urgent > Commanding > Informative, decided by lexicon hits and the first clause's head word."""

    def classify(self, text: str) -> EmotionCategory:
        if not text or not text.strip():
            raise InputValidationError("cannot classify an empty command")
        if "!" in text:
            return EmotionCategory.URGENT
        words = split_words(text)
        if URGENT_WORDS.intersection(words):
            return EmotionCategory.URGENT
        joined = f" {' '.join(words)} "
        if any(f" {phrase} " in joined for phrase in URGENT_PHRASES):
            return EmotionCategory.URGENT
        heads = _clause_heads(text)
        if URGENT_CLAUSE_HEADS.intersection(heads):
            return EmotionCategory.URGENT
        if heads and heads[0] in COMMAND_VERBS:
            return EmotionCategory.COMMANDING
        return EmotionCategory.INFORMATIVE


class ExternalEmotionClassifier:
    """Client for a remote classifier: POST {"text"} -> {"label"}.

    Requests are serialized per instance. Any transport error, timeout or
    malformed answer falls back to the rule-based classifier and is counted.
    """

    def __init__(self, url: str, timeout: float = 2.0, transport: Optional[httpx.BaseTransport] = None,
                 fallback: Optional[EmotionClassifier] = None):
        self.url = url
        self.fallback = fallback or RuleBasedEmotionClassifier()
        self.fallback_count = 0
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._lock = threading.Lock()

    def classify(self, text: str) -> EmotionCategory:
        payload = EmotionRequest(text=text).model_dump()
        with self._lock:
            try:
                response = self._client.post(self.url, json=payload)
                response.raise_for_status()
                return EmotionResponse.model_validate(response.json()).label
            except (httpx.HTTPError, ValidationError, ValueError) as e:
                self.fallback_count += 1
                logger.warning(f"Emotion classifier at {self.url} failed ({type(e).__name__}: {e}); using rules")
                return self.fallback.classify(text)

    def close(self) -> None:
        self._client.close()


def get_classifier(mode: str = "rule") -> EmotionClassifier:
    if mode == "rule":
        return RuleBasedEmotionClassifier()
    if mode == "external":
        if not settings.EMOTION_CLASSIFIER_URL:
            raise ConfigurationError("external mode needs CAVG_EMOTION_CLASSIFIER_URL", field="emotion_mode")
        return ExternalEmotionClassifier(settings.EMOTION_CLASSIFIER_URL, settings.EMOTION_CLASSIFIER_TIMEOUT)
    raise ConfigurationError(f"unknown emotion mode '{mode}'", field="emotion_mode")


def classify_emotion(command: Command, classifier: Optional[EmotionClassifier] = None) -> EmotionCategory:
    """Fill `command.emotion` and return it."""
    classifier = classifier or RuleBasedEmotionClassifier()
    command.emotion = classifier.classify(command.raw_text)
    return command.emotion


def prepare_command(text: str, vocabulary: Vocabulary, max_tokens: int,
                    classifier: Optional[EmotionClassifier] = None,
                    label: Optional[EmotionCategory] = None) -> Command:
    """Tokenize and categorize a command; a label stored with the scene wins over the classifier."""
    command = tokenize(text, vocabulary, max_tokens)
    if label is not None:
        command.emotion = label
    else:
        classify_emotion(command, classifier)
    return command
