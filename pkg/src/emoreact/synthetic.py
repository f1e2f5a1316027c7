"""Synthetic heterogeneous corpora whose classes follow the reaction/emotion rules.

Each text has a latent emotion.  Its words mix emotion cue words with
neutral filler.  Cue words come in three "styles", one per emotion dataset
(affective, isear, fairy), plus a few per emotion shared by every source.
Posts use cues of every style.  A post's reaction is drawn from the emotion
through the rule mapping (happiness -> HAHA or LOVE, anger/disgust -> ANGRY,
fear/surprise -> WOW, sadness -> SAD) with some noise.  Disgust and fear
posts get a noisier reaction, so the rules that link them are weak in the
data just as they carry a small weight in the default rule set.

Training on two emotion styles and testing on the third reproduces the
cross-dataset setting where the emotion head must lean on what the
reaction data teaches about unseen cue words.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labels import EMOTION, EMOTIONS, REACTION, REACTIONS
from .textprep import EMOTION_SETS, Corpus, RawPost, make_record

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"

# which reactions each emotion tends to provoke
REACTION_GIVEN_EMOTION = {
    "anger": {"ANGRY": 1.0},
    "disgust": {"ANGRY": 1.0},
    "fear": {"WOW": 1.0},
    "happiness": {"HAHA": 0.5, "LOVE": 0.5},
    "sadness": {"SAD": 1.0},
    "surprise": {"WOW": 1.0},
}

# emotion mix of posts, roughly following the reaction census of the real data
POST_EMOTION_PRIOR = {"anger": 0.10, "disgust": 0.08, "fear": 0.10, "happiness": 0.40,
                      "sadness": 0.17, "surprise": 0.15}

# reaction noise for emotions whose rules carry the weak weight
WEAK_LINK_NOISE = {"disgust": 0.5, "fear": 0.5}


@dataclass
class SyntheticConfig:
    cues_per_style: int = 4
    # cue words per emotion common to every source
    shared_cues: int = 4
    # cue styles used by posts; None means all of them
    post_styles: tuple[str, ...] | None = None
    n_filler: int = 120
    min_len: int = 5
    max_len: int = 10
    cue_tokens: tuple[int, int] = (1, 3)
    # chance that one cue word comes from a random other emotion
    cue_noise: float = 0.15
    # chance that a post's reaction is uniform noise instead of the rule mapping
    reaction_noise: float = 0.15
    # per-emotion overrides of reaction_noise
    emotion_reaction_noise: dict = field(default_factory=lambda: dict(WEAK_LINK_NOISE))
    emotion_prior: dict = field(default_factory=lambda: dict(POST_EMOTION_PRIOR))


def _word(rng: np.random.Generator, syllables: int) -> str:
    return "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(syllables))


class Lexicon:
    """Cue words per (emotion, style) and a shared filler vocabulary."""

    def __init__(self, seed: int = 0, cfg: SyntheticConfig | None = None):
        self.cfg = cfg or SyntheticConfig()
        rng = np.random.default_rng(seed)
        used: set[str] = set()

        def fresh(syllables):
            while True:
                w = _word(rng, syllables)
                if w not in used:
                    used.add(w)
                    return w

        self.cues = {(e, s): [fresh(3) for _ in range(self.cfg.cues_per_style)]
                     for e in EMOTIONS for s in EMOTION_SETS}
        for e in EMOTIONS:
            self.cues[(e, "shared")] = [fresh(3) for _ in range(self.cfg.shared_cues)]
        self.filler = [fresh(2) for _ in range(self.cfg.n_filler)]

    def styles_for(self, source: str) -> tuple[str, ...]:
        if source in ("posts", "unlabeled"):
            styles = self.cfg.post_styles or EMOTION_SETS
        else:
            styles = (source,)
        return (*styles, "shared") if self.cfg.shared_cues else tuple(styles)

    def sample_text(self, emotion: str, source: str, rng: np.random.Generator) -> str:
        cfg = self.cfg
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        n_cue = int(rng.integers(cfg.cue_tokens[0], cfg.cue_tokens[1] + 1))
        styles = self.styles_for(source)
        words = []
        for _ in range(n_cue):
            emo = emotion
            if rng.random() < cfg.cue_noise:
                emo = EMOTIONS[int(rng.integers(len(EMOTIONS)))]
            style = styles[int(rng.integers(len(styles)))]
            pool = self.cues[(emo, style)]
            words.append(pool[int(rng.integers(len(pool)))])
        while len(words) < length:
            words.append(self.filler[int(rng.integers(len(self.filler)))])
        rng.shuffle(words)
        return " ".join(words)

    def sample_emotion(self, rng: np.random.Generator, prior: dict | None = None) -> str:
        prior = prior or self.cfg.emotion_prior
        names = list(prior)
        p = np.array([prior[n] for n in names], dtype=float)
        return names[int(rng.choice(len(names), p=p / p.sum()))]

    def sample_reaction(self, emotion: str, rng: np.random.Generator) -> str:
        if rng.random() < self.cfg.emotion_reaction_noise.get(emotion, self.cfg.reaction_noise):
            return REACTIONS[int(rng.integers(len(REACTIONS)))]
        table = REACTION_GIVEN_EMOTION[emotion]
        names = list(table)
        return names[int(rng.choice(len(names), p=np.array([table[n] for n in names])))]

    # -- raw datasets ------------------------------------------------------

    def posts(self, n: int, rng: np.random.Generator, min_hits: int = 0, max_hits: int = 120) -> list[RawPost]:
        """Posts with reaction tallies; the dominant reaction follows the emotion."""
        out = []
        for _ in range(n):
            emotion = self.sample_emotion(rng)
            text = self.sample_text(emotion, "posts", rng)
            total = int(rng.integers(min_hits, max_hits + 1))
            weights = np.full(len(REACTIONS), 0.4)
            weights[REACTIONS.index(self.sample_reaction(emotion, rng))] += rng.uniform(1.0, 6.0)
            counts = rng.multinomial(total, weights / weights.sum())
            out.append(RawPost(text, {name: int(c) for name, c in zip(REACTIONS, counts)}))
        return out

    def labeled_posts(self, n: int, rng: np.random.Generator) -> list[tuple[str, str]]:
        out = []
        for _ in range(n):
            emotion = self.sample_emotion(rng)
            out.append((self.sample_text(emotion, "posts", rng), self.sample_reaction(emotion, rng)))
        return out

    def unlabeled_posts(self, n: int, rng: np.random.Generator) -> list[str]:
        return [self.sample_text(self.sample_emotion(rng), "posts", rng) for _ in range(n)]

    def emotion_dataset(self, n: int, style: str, rng: np.random.Generator,
                        exclude: tuple[str, ...] = ()) -> list[tuple[str, str]]:
        """Emotion-labeled sentences in one dataset style, classes roughly balanced."""
        classes = [e for e in EMOTIONS if e not in exclude]
        prior = {e: 1.0 for e in classes}
        out = []
        for _ in range(n):
            emotion = self.sample_emotion(rng, prior)
            out.append((self.sample_text(emotion, style, rng), emotion))
        return out


@dataclass
class ExperimentData:
    train: Corpus
    val: Corpus
    test: Corpus
    lexicon: Lexicon


def experiment_corpora(seed: int = 0, n_reaction: int = 2000, n_emotion: int = 600, n_unlabeled: int = 4000,
                       n_val_reaction: int = 400, n_val_emotion: int = 150, n_test_reaction: int = 400,
                       n_test_emotion: int = 600, test_style: str = "fairy",
                       cfg: SyntheticConfig | None = None) -> ExperimentData:
    """Train/validation/test corpora of records for the plain/constr/artificial comparison.

    The emotion training and validation texts use the two styles other than
    ``test_style``; the emotion test texts use ``test_style`` only.
    """
    lex = Lexicon(seed, cfg)
    rng = np.random.default_rng(seed + 1)
    train_styles = [s for s in EMOTION_SETS if s != test_style]

    def emotion_records(n, styles):
        recs = []
        for k, style in enumerate(styles):
            share = n // len(styles) + (1 if k < n % len(styles) else 0)
            recs += [make_record(t, EMOTION, e, style) for t, e in lex.emotion_dataset(share, style, rng)]
        return recs

    def reaction_records(n):
        return [make_record(t, REACTION, r, "posts") for t, r in lex.labeled_posts(n, rng)]

    train = Corpus(reaction_records(n_reaction), emotion_records(n_emotion, train_styles),
                   [make_record(t, None, None, "unlabeled") for t in lex.unlabeled_posts(n_unlabeled, rng)])
    val = Corpus(reaction_records(n_val_reaction), emotion_records(n_val_emotion, train_styles))
    test = Corpus(reaction_records(n_test_reaction), emotion_records(n_test_emotion, [test_style]))
    return ExperimentData(train, val, test, lex)


# ---------------------------------------------------------------------------
# Raw files in the external formats

_ISEAR_NAMES = {"happiness": "joy"}


def write_raw_corpora(out_dir, seed: int = 0, n_posts: int = 600, n_unlabeled: int = 300,
                      n_per_set: int = 150, cfg: SyntheticConfig | None = None) -> dict[str, str]:
    """Write posts/affective/isear/fairy/unlabeled files as ``prepare`` expects them.

    Returns the written paths keyed by the matching ``prepare`` flag.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lex = Lexicon(seed, cfg)
    rng = np.random.default_rng(seed + 7)
    paths = {name: str(out / fname) for name, fname in (
        ("posts", "posts.tsv"), ("affective", "affective.tsv"), ("isear", "isear.tsv"),
        ("fairy", "fairy.tsv"), ("unlabeled", "unlabeled.txt"))}

    with open(paths["posts"], "w", encoding="utf-8") as fh:
        fh.write("text\tlove\twow\thaha\tsad\tangry\n")
        for post in lex.posts(n_posts, rng):
            hits = post.reaction_hits
            fh.write("\t".join([post.text, *(str(hits[c.upper()]) for c in ("love", "wow", "haha", "sad", "angry"))]) + "\n")
    with open(paths["affective"], "w", encoding="utf-8") as fh:
        fh.write("text\t" + "\t".join(EMOTIONS) + "\n")
        for text, emotion in lex.emotion_dataset(n_per_set, "affective", rng):
            scores = rng.integers(0, 40, size=len(EMOTIONS))
            scores[EMOTIONS.index(emotion)] = rng.integers(50, 101)
            fh.write(text + "\t" + "\t".join(str(int(v)) for v in scores) + "\n")
    with open(paths["isear"], "w", encoding="utf-8") as fh:
        for text, emotion in lex.emotion_dataset(n_per_set, "isear", rng, exclude=("surprise",)):
            fh.write(f"{text}\t{_ISEAR_NAMES.get(emotion, emotion)}\n")
    with open(paths["fairy"], "w", encoding="utf-8") as fh:
        for text, emotion in lex.emotion_dataset(n_per_set, "fairy", rng):
            fh.write(f"{text}\t{emotion}\n")
    with open(paths["unlabeled"], "w", encoding="utf-8") as fh:
        for text in lex.unlabeled_posts(n_unlabeled, rng):
            fh.write(text + "\n")
    return paths

# ---------------------------------------------------------------------------
# plain / constr / artificial comparison

MIN_EMOTION_GAIN = 0.02


@dataclass
class ExperimentSettings:
    """Model and optimizer settings of the desk-scale comparison."""

    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    dims: int = 16
    lr: float = 1e-2
    max_epochs: int = 30
    patience: int = 5
    vocab_size: int = 10000
    variants: tuple[str, ...] = ("plain", "constr", "artificial")


@dataclass
class Comparison:
    # scores[variant] = list of (reaction macro-F1, emotion macro-F1), one per seed
    scores: dict[str, list[tuple[float, float]]]
    settings: ExperimentSettings

    def mean(self, variant: str) -> tuple[float, float]:
        a = np.asarray(self.scores[variant], dtype=float)
        return float(a[:, 0].mean()), float(a[:, 1].mean())

    def emotion_gain(self) -> float:
        return self.mean("constr")[1] - self.mean("plain")[1]

    def checks(self) -> dict[str, bool]:
        out = {}
        if "plain" in self.scores and "constr" in self.scores:
            out["constr emotion F1 >= plain + %.2f" % MIN_EMOTION_GAIN] = self.emotion_gain() >= MIN_EMOTION_GAIN
        if "artificial" in self.scores and "constr" in self.scores:
            out["artificial emotion F1 <= constr"] = self.mean("artificial")[1] <= self.mean("constr")[1]
        return out

    @property
    def passed(self) -> bool:
        checks = self.checks()
        return bool(checks) and all(checks.values())

    def table(self) -> str:
        lines = [f"{'variant':<12}{'reaction F1':>13}{'emotion F1':>13}"]
        for v in self.scores:
            r, e = self.mean(v)
            lines.append(f"{v:<12}{r:>13.3f}{e:>13.3f}")
        return "\n".join(lines)


def run_comparison(settings: ExperimentSettings | None = None, cfg: SyntheticConfig | None = None,
                   progress=None) -> Comparison:
    """Train every variant on each seed's synthetic corpus and score the test split."""
    from . import net, trainer
    from .textprep import build_vocab, encode_corpus

    settings = settings or ExperimentSettings()
    scores: dict[str, list[tuple[float, float]]] = {v: [] for v in settings.variants}
    for seed in settings.seeds:
        data = experiment_corpora(seed, cfg=cfg)
        vocab = build_vocab([r.tokens for r in data.train.all()], settings.vocab_size)
        train, val, test = (encode_corpus(c, vocab) for c in (data.train, data.val, data.test))
        model_cfg = net.ModelConfig(vocab_size=len(vocab), d_emb=settings.dims, d_h=settings.dims)
        for variant in settings.variants:
            tcfg = trainer.TrainConfig(variant=variant, lr=settings.lr, max_epochs=settings.max_epochs,
                                       patience=settings.patience, seed=seed)
            report, _, history = trainer.run_variant(train, val, test, model_cfg, tcfg)
            pair = (report[REACTION].macro_f1, report[EMOTION].macro_f1)
            scores[variant].append(pair)
            if progress:
                progress(seed, variant, pair, len(history))
    return Comparison(scores, settings)
