"""End-to-end experiments: sequential-digit prediction and language modeling.

Every run draws its randomness from a few independent streams derived from the
config seed (data, model, training stream, evaluation stream), so identical
configs give identical metric values.
"""

import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, pack_optimizer, save_checkpoint, unpack_optimizer
from .config import RunConfig
from .data import (
    UNK,
    ImagePool,
    InputScaler,
    Vocabulary,
    load_embedding_file,
    markov_corpus,
    repeat_corpus,
    synthetic_embedding_table,
    tokenize,
)
from .dense import make_rng
from .estimator import BRSMSequenceClassifier
from .grammar import GrammarStream, ceiling_exact, load_grammar, ngram_predict
from .metrics import MetricsWriter, layer_entropy, max_entropy, perplexity
from .readout import MixWeights, WordCache, mix_distributions

log = logging.getLogger(__name__)

DATA_ENV = "BRSM_DATA_DIR"
CHUNK = 100
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
SYNTHETIC_CORPORA = ("markov", "repeat")


def data_dir(explicit=None):
    return Path(explicit or os.environ.get(DATA_ENV) or "data")


def seed_streams(seed):
    """Independent integer seeds for the data, model, training and evaluation streams."""
    data, model, train, evaluate = np.random.SeedSequence(int(seed)).generate_state(4)
    return {"data": int(data), "model": int(model), "train": int(train), "eval": int(evaluate)}


def make_estimator(cfg, n_classes):
    return BRSMSequenceClassifier(
        m=cfg.m, n=cfg.n, k=cfg.k, epsilon=cfg.epsilon, trainable_decay=cfg.trainable_decay,
        decay_ceiling=cfg.decay_ceiling, duty_rate=cfg.duty_rate, strategy=cfg.strategy,
        boost_strength=cfg.boost_strength, boost_factor=cfg.boost_factor,
        epoch_steps=cfg.epoch_steps, inhibition_decay=cfg.inhibition_decay,
        inhibition_strength=cfg.inhibition_strength, partitions=cfg.partition_spec(),
        learning_rate=cfg.learning_rate, decoder_l2=cfg.decoder_l2,
        forget_prob=cfg.forget_prob, rsm_freeze_step=cfg.rsm_freeze_step, dtype=cfg.dtype,
        random_state=seed_streams(cfg.seed)["model"], n_classes=n_classes,
        hidden_size=cfg.hidden_size, readout_lr=cfg.readout_lr, readout_input=cfg.readout_input,
    )


def run_id(cfg):
    return f"{cfg.task}-seed{cfg.seed}"


# -- checkpoints ---------------------------------------------------------------


def save_run(path, cfg, est, extra=None):
    layer, trainer = est.layer_, est.trainer_
    arrays = {f"layer/{k}": v for k, v in layer.weights.as_dict().items() if v is not None}
    arrays["layer/duty"] = layer.duty
    arrays.update({f"readout/{k}": v for k, v in trainer.readout.params.items()})
    opt_arrays, opt_scalars = pack_optimizer("opt", trainer.optimizer)
    ro_arrays, ro_scalars = pack_optimizer("ropt", trainer.readout_optimizer)
    arrays.update(opt_arrays)
    arrays.update(ro_arrays)
    header = dict(
        extra or {},
        config=cfg.to_text(),
        steps=trainer.steps,
        boost_strength=layer.boost_strength,
        n_features=est.n_features_in_,
        batch_size=est.batch_size_,
        n_classes=est.n_classes_,
        optimizer=opt_scalars,
        readout_optimizer=ro_scalars,
    )
    save_checkpoint(path, header=header, arrays=arrays)


def restore_run(path):
    """Rebuild (config, estimator, header) from a checkpoint written by :func:`save_run`."""
    header, arrays = load_checkpoint(path)
    cfg = RunConfig.from_text(header["config"])
    est = make_estimator(cfg, header["n_classes"])
    est.n_classes_ = header["n_classes"]
    est.classes_ = np.arange(est.n_classes_)
    est._build(header["n_features"], header["batch_size"])
    for key, value in arrays.items():
        group, _, name = key.partition("/")
        if group == "layer" and name == "duty":
            est.layer_.duty = value.copy()
        elif group == "layer":
            current = getattr(est.layer_.weights, name)
            if current is None or current.shape != value.shape:
                raise ValueError(f"checkpoint tensor {name} does not match the configured model")
            setattr(est.layer_.weights, name, value.copy())
        elif group == "readout":
            est.trainer_.readout.params[name] = value.copy()
    unpack_optimizer("opt", est.trainer_.optimizer, arrays, header["optimizer"])
    unpack_optimizer("ropt", est.trainer_.readout_optimizer, arrays, header["readout_optimizer"])
    est.trainer_.steps = header["steps"]
    est.layer_.boost_strength = header["boost_strength"]
    return cfg, est, header


# -- sequential digit prediction -------------------------------------------------


@dataclass
class DigitData:
    grammar: object
    train_pool: ImagePool
    eval_pool: ImagePool
    scaler: InputScaler


def load_digit_data(cfg, root=None):
    """Grammar plus scaled train / held-out image pools."""
    grammar = load_grammar(cfg.grammar)
    if cfg.images == "synthetic":
        rng = make_rng(seed_streams(cfg.seed)["data"])
        train, held = ImagePool.synthetic_pair(
            rng, n_labels=grammar.alphabet_size, per_label=cfg.synthetic_per_label,
            noise=cfg.synthetic_noise,
        )
    else:
        base = data_dir(root) if cfg.images == "mnist" else Path(cfg.images)
        train, held = (_mnist_pool(base, split) for split in ("train", "test"))
    scaler = InputScaler.fit(np.concatenate(list(train.by_label.values())))
    return DigitData(grammar, scaler.apply_pool(train), scaler.apply_pool(held), scaler)


def _mnist_pool(base, split):
    paths = []
    for name in MNIST_FILES[split]:
        found = [base / name, base / (name + ".gz")]
        found = [p for p in found if p.exists()]
        if not found:
            raise FileNotFoundError(f"missing MNIST file {name} in {base}")
        paths.append(found[0])
    return ImagePool.from_idx_files(*paths)


def digit_batches(grammar, pool, mode, batch, rng):
    """Endless (images, labels) batches from ``batch`` parallel grammar streams."""
    stream = GrammarStream(grammar, batch, rng)
    for labels in stream:
        yield pool.observe(labels, mode, rng), labels


def evaluate_digits(est, data, cfg, steps=None, batch=None):
    """Held-out next-label accuracy from a fresh memory; the model is not modified.

    The evaluation stream is regenerated from the same seed each time, so two
    evaluations of one model see identical inputs.
    """
    steps = steps or cfg.eval_steps
    batch = batch or cfg.eval_batch
    rng = make_rng(seed_streams(cfg.seed)["eval"])
    layer, clf = est.layer_, est.trainer_.readout
    state = layer.new_state(batch)
    correct = total = 0
    prev_pred = None
    for t, (x, labels) in enumerate(digit_batches(data.grammar, data.eval_pool, cfg.observation, batch, rng)):
        if t >= steps:
            break
        if prev_pred is not None:
            correct += int(np.sum(prev_pred == labels))
            total += batch
        out, state = layer.step(x, state, update_duty_cycle=False)
        feats = out.y.reshape(batch, -1) if cfg.readout_input == "y" else state.psi
        prev_pred = np.argmax(clf.predict_proba(feats), axis=-1)
    return correct / max(total, 1)


def ngram_baseline(data, cfg, order=1, steps=None):
    """Accuracy of a count-based order-``order`` predictor on a held-out label stream."""
    rng = make_rng(seed_streams(cfg.seed)["eval"])
    stream = GrammarStream(data.grammar, 1, rng)
    labels = np.array([next(stream)[0] for _ in range(steps or max(cfg.eval_steps, 20_000))])
    return ngram_predict(labels, order)


@dataclass
class RunResult:
    final: dict
    history: list = field(default_factory=list)
    checkpoint: Path = None
    metrics_path: Path = None


def train_digits(cfg, root=None, out_dir=None, stop_accuracy=None, echo=print):
    """Train on grammar streams of digit images with periodic held-out evaluation.

    Stops after ``cfg.steps`` steps, or at the first evaluation reaching
    ``stop_accuracy`` when given. ``final['accuracy']`` is the last
    evaluation's held-out accuracy.
    """
    data = load_digit_data(cfg, root)
    ceiling = ceiling_exact(data.grammar)
    est = make_estimator(cfg, data.grammar.alphabet_size)
    rng = make_rng(seed_streams(cfg.seed)["train"])
    batches = digit_batches(data.grammar, data.train_pool, cfg.observation, cfg.batch_size, rng)
    out_dir = Path(out_dir or cfg.metrics_dir)
    history = []
    t0 = time.perf_counter()
    eval_every = cfg.eval_every or cfg.steps
    window = []
    with MetricsWriter(out_dir, run_id(cfg), cfg.as_dict(), cfg.flush_every) as writer:
        done = 0
        while done < cfg.steps:
            # one extra item on the very first chunk: partial_fit pairs items with successors
            size = min(CHUNK, cfg.steps - done, eval_every - done % eval_every) + (done == 0)
            chunk = [next(batches) for _ in range(size)]
            X = np.stack([c[0] for c in chunk], axis=1)
            y = np.stack([c[1] for c in chunk], axis=1)
            if done == 0:
                est.fit(X, y)
            else:
                est.partial_fit(X, y)
            window.extend(r["accuracy"] for r in est.history_)
            mse = float(np.mean([r["mse"] for r in est.history_]))
            est.history_.clear()
            step = done = est.n_steps_
            if step % eval_every == 0 or step == cfg.steps:
                acc = evaluate_digits(est, data, cfg)
                rec = dict(step=step, accuracy=acc, train_accuracy=float(np.mean(window)),
                           mse=mse, entropy=layer_entropy(est.layer_.duty),
                           boost_strength=est.layer_.boost_strength)
                writer.emit(step, **{k: v for k, v in rec.items() if k != "step"})
                history.append(rec)
                echo(f"step {step:7d}  held-out acc {acc:.4f}  train acc {rec['train_accuracy']:.4f}"
                     f"  mse {mse:.6f}  ({time.perf_counter() - t0:.1f}s)")
                window = []
                if stop_accuracy is not None and acc >= stop_accuracy:
                    break
        metrics_path = writer.path
    final = dict(history[-1], ceiling=ceiling, seconds=time.perf_counter() - t0)
    final["fraction_of_ceiling"] = final["accuracy"] / ceiling
    ckpt = out_dir / f"{run_id(cfg)}.ckpt.npz"
    save_run(ckpt, cfg, est)
    echo(f"final: accuracy {final['accuracy']:.4f}  ceiling {ceiling:.4f}  "
         f"ratio {final['fraction_of_ceiling']:.4f}  steps {final['step']}")
    return RunResult(final, history, ckpt, metrics_path)


# -- language modeling ---------------------------------------------------------------


@dataclass
class Corpus:
    vocab: Vocabulary
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    embeddings: np.ndarray


def synthetic_corpus_text(kind, rng, n_tokens):
    if kind == "markov":
        return markov_corpus(rng, n_tokens=n_tokens)
    if kind == "repeat":
        return repeat_corpus(rng, n_tokens=n_tokens)
    raise ValueError(f"unknown synthetic corpus {kind!r}; choose from {SYNTHETIC_CORPORA}")


def load_corpus(cfg, root=None, synthetic_tokens=10_000):
    """Token splits and scaled embedding vectors.

    ``cfg.corpus`` is a directory with train/valid/test text files, or the name
    of a synthetic corpus (``markov`` or ``repeat``) whose test and validation
    splits are a tenth of the training size each.
    """
    if cfg.corpus in SYNTHETIC_CORPORA:
        rng = make_rng(seed_streams(cfg.seed)["data"])
        # one generating process, split by line so every split shares it
        lines = synthetic_corpus_text(cfg.corpus, rng, synthetic_tokens * 12 // 10).splitlines()
        cut = len(lines) // 12
        texts = {
            "train": "\n".join(lines[: -2 * cut]),
            "valid": "\n".join(lines[-2 * cut : -cut]),
            "test": "\n".join(lines[-cut:]),
        }
    else:
        base = Path(cfg.corpus) if cfg.corpus else data_dir(root)
        texts = {}
        for split in ("train", "valid", "test"):
            path = base / f"{split}.txt"
            if not path.exists():
                raise FileNotFoundError(f"missing corpus split {path}")
            texts[split] = path.read_text()
    train_tokens = tokenize(texts["train"])
    vocab = Vocabulary.build(train_tokens + [UNK])
    if cfg.embedding == "synthetic":
        table = synthetic_embedding_table(len(vocab))
    else:
        table = load_embedding_file(Path(cfg.embedding).read_text()).for_vocabulary(vocab)
    scaler = InputScaler.fit(table)
    return Corpus(
        vocab,
        vocab.encode(train_tokens),
        vocab.encode(tokenize(texts["valid"])),
        vocab.encode(tokenize(texts["test"])),
        scaler(table),
    )


def unigram_perplexity(train, test, vocab_size):
    """Add-one smoothed unigram model fitted on ``train``."""
    counts = np.bincount(train, minlength=vocab_size) + 1.0
    probs = counts / counts.sum()
    return perplexity(np.log(probs[test]))


def segments(tokens, batch):
    """Split a token stream into ``batch`` contiguous rows of equal length."""
    length = len(tokens) // batch
    if length < 2:
        raise ValueError(f"{len(tokens)} tokens cannot fill {batch} streams")
    return tokens[: length * batch].reshape(batch, length)


def evaluate_lm(est, corpus, cfg, split="test", cache_weight=None):
    """Perplexity of the mixed model/cache/uniform distribution on ``split``.

    The split is cut into ``cfg.eval_batch`` contiguous streams that each start
    from cleared memory and an empty cache. Nothing in the model is modified.
    Returns (perplexity, smallest probability assigned to any target).
    """
    tokens = getattr(corpus, split)
    rows = segments(tokens, min(cfg.eval_batch, len(tokens) // 2))
    batch, length = rows.shape
    mix = MixWeights(uniform=cfg.uniform_mass,
                     cache=cfg.cache_weight if cache_weight is None else cache_weight)
    vocab = len(corpus.vocab)
    layer, clf = est.layer_, est.trainer_.readout
    state = layer.new_state(batch)
    cache = WordCache(vocab, cfg.cache_decay, batch_size=batch)
    logs = []
    idx = np.arange(batch)
    for t in range(length - 1):
        current = rows[:, t]
        out, state = layer.step(corpus.embeddings[current], state, update_duty_cycle=False)
        feats = out.y.reshape(batch, -1) if cfg.readout_input == "y" else state.psi
        cache.update(current)
        dist = mix_distributions(clf.predict_proba(feats), cache, mix)
        logs.append(np.log(dist[idx, rows[:, t + 1]]))
    logs = np.concatenate(logs)
    return perplexity(logs), float(np.exp(logs.min()))


def train_lm(cfg, root=None, out_dir=None, echo=print, corpus=None):
    """Train on contiguous token streams and report held-out perplexity."""
    corpus = corpus or load_corpus(cfg, root)
    vocab = len(corpus.vocab)
    est = make_estimator(cfg, vocab)
    rows = segments(corpus.train, cfg.batch_size)
    length = rows.shape[1]
    out_dir = Path(out_dir or cfg.metrics_dir)
    baseline = unigram_perplexity(corpus.train, corpus.test, vocab)
    history = []
    t0 = time.perf_counter()
    eval_every = cfg.eval_every or cfg.steps
    pos = 0
    with MetricsWriter(out_dir, run_id(cfg), cfg.as_dict(), cfg.flush_every) as writer:
        done = 0
        while done < cfg.steps:
            size = min(CHUNK, cfg.steps - done, eval_every - done % eval_every) + (done == 0)
            # wrap around the training rows, keeping memory across the seam
            cols = (pos + np.arange(size)) % length
            pos = (pos + size) % length
            tok = rows[:, cols]
            if done == 0:
                est.fit(corpus.embeddings[tok], tok)
            else:
                est.partial_fit(corpus.embeddings[tok], tok)
            mse = float(np.mean([r["mse"] for r in est.history_]))
            xent = float(np.mean([r["xent"] for r in est.history_]))
            est.history_.clear()
            step = done = est.n_steps_
            if step % eval_every == 0 or step == cfg.steps:
                ppl, _ = evaluate_lm(est, corpus, cfg, "valid")
                rec = dict(step=step, valid_ppl=ppl, mse=mse, train_xent=xent,
                           entropy=layer_entropy(est.layer_.duty),
                           boost_strength=est.layer_.boost_strength)
                writer.emit(step, **{k: v for k, v in rec.items() if k != "step"})
                history.append(rec)
                echo(f"step {step:7d}  valid ppl {ppl:.3f}  train xent {xent:.4f}  mse {mse:.6f}"
                     f"  ({time.perf_counter() - t0:.1f}s)")
        test_ppl, min_prob = evaluate_lm(est, corpus, cfg, "test")
        entropy = layer_entropy(est.layer_.duty)
        final = dict(history[-1], test_ppl=test_ppl, unigram_ppl=baseline, min_prob=min_prob,
                     entropy=entropy, max_entropy=max_entropy(cfg.k, cfg.m, cfg.n),
                     seconds=time.perf_counter() - t0)
        writer.emit(final["step"], test_ppl=test_ppl, unigram_ppl=baseline, entropy=entropy)
        metrics_path = writer.path
    ckpt = out_dir / f"{run_id(cfg)}.ckpt.npz"
    save_run(ckpt, cfg, est, extra={"vocab_size": vocab})
    echo(f"final: test ppl {test_ppl:.3f}  unigram ppl {baseline:.3f}  "
         f"entropy {entropy:.1f} / {final['max_entropy']:.1f} bits")
    return RunResult(final, history, ckpt, metrics_path)


def evaluate_checkpoint(path, root=None, overrides=()):
    """Evaluation-only pass over a saved run; forgetting never applies here.

    ``overrides`` may change evaluation settings (e.g. ``cache_weight=0.07``)
    but not the model geometry.
    """
    cfg, est, header = restore_run(path)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    if cfg.task == "ssmnist":
        data = load_digit_data(cfg, root)
        acc = evaluate_digits(est, data, cfg)
        return {"task": "ssmnist", "step": header["steps"], "accuracy": acc,
                "ceiling": ceiling_exact(data.grammar)}
    corpus = load_corpus(cfg, root)
    if len(corpus.vocab) != header.get("vocab_size"):
        raise ValueError("checkpoint vocabulary does not match the corpus")
    ppl, min_prob = evaluate_lm(est, corpus, cfg, "test")
    return {"task": "lm", "step": header["steps"], "test_ppl": ppl, "min_prob": min_prob}
