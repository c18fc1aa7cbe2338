"""Acceptance criteria 1-10, one test each, with a PASS/FAIL line per criterion.

Criterion 7 is reported only. The learning runs (6 and 7) take several minutes
on one core.
"""
import contextlib
import itertools
import json
import math
import time

import numpy as np
import pytest
import torch
import yaml

from causal_vsumm import cli
from causal_vsumm import dataset as ds
from causal_vsumm.config import RunConfig
from causal_vsumm.decoder import Decoder, log_prior
from causal_vsumm.encoder import Encoder, PosteriorParams, gate
from causal_vsumm.evaluation import accuracy, f1, metrics
from causal_vsumm.features import Vocabulary, make_featurizer
from causal_vsumm.model import CausalVideoSummarizer, ModelConfig, tensorize
from causal_vsumm.objective import TrainConfig, causal_objective, draw_noise, gaussian_kl, train
from conftest import ACCEPTANCE_LINES, assert_same_corpus, finite_difference_check, sample_entries, small_model_and_data

DT = torch.float64


@contextlib.contextmanager
def criterion(number, title):
    info = {}
    try:
        yield info
    except BaseException:
        ACCEPTANCE_LINES.append(f"CRITERION {number}: FAIL  {title}  {info.get('detail', '')}".rstrip())
        raise
    ACCEPTANCE_LINES.append(f"CRITERION {number}: PASS  {title}  {info.get('detail', '')}".rstrip())


# --- 1 ---------------------------------------------------------------------------------


def test_criterion_1_gate_identities():
    with criterion(1, "gate identities bit-exact over 1000 parameter draws") as info:
        start = time.perf_counter()
        g = torch.Generator().manual_seed(0)
        torch.manual_seed(0)
        enc = Encoder(x_dim=8, n_classes=3, latent_dim=4, hidden_dim=16).double()
        dec = Decoder(x_dim=8, n_classes=3, latent_dim=4, hidden_dim=16).double()
        params = list(enc.parameters()) + list(dec.parameters())
        for _ in range(1000):
            with torch.no_grad():
                for p in params:
                    p.copy_(torch.randn(p.shape, generator=g, dtype=DT))
            x = torch.randn(6, 8, generator=g, dtype=DT)
            t = (torch.rand(6, generator=g) < 0.5).to(DT)
            hard = t[:, None] == 1
            post = enc(x, t)
            assert torch.equal(post.mu, torch.where(hard, post.mu_t1, post.mu_t0))
            assert torch.equal(post.var, torch.where(hard, post.var_t1, post.var_t0))
            assert torch.equal(post.y_logits, torch.where(hard, enc.y1_net(x), enc.y0_net(x)))
            z = torch.randn(6, 4, generator=g, dtype=DT)
            assert torch.equal(dec.decode_y(z, t), torch.where(hard, dec.y1_net(z), dec.y0_net(z)))
        elapsed = time.perf_counter() - start
        info["detail"] = f"({elapsed:.1f} s)"
        assert elapsed < 10


# --- 2 ---------------------------------------------------------------------------------


def test_criterion_2_elbo_bookkeeping(small_corpus):
    with criterion(2, "ELBO = L_causal - L_auxiliary on every step of a 5-epoch run") as info:
        model, data = small_model_and_data(small_corpus, n_pairs=6, n_frames=199, dtype=torch.float32,
                                           channels=4, feature_dim=8, latent_dim=4, hidden_dim=16)
        result = train(model, data, TrainConfig(epochs=5, batch_size=2))
        worst = max(abs(r.ELBO - (r.L_causal - r.L_auxiliary)) for r in result.steps)
        info["detail"] = f"({len(result.steps)} steps, max deviation {worst:.1e})"
        assert len(result.steps) == 15 and worst <= 1e-9
        for r in result.history:
            assert abs(r["ELBO"] - (r["L_causal"] - r["L_auxiliary"])) <= 1e-9


# --- 3 ---------------------------------------------------------------------------------


def test_criterion_3_kl_oracle():
    with criterion(3, "closed-form KL vs 1e5-sample MC within 3 SE for 100 pairs") as info:
        g = torch.Generator().manual_seed(0)
        n = 100_000
        gaps = []
        for _ in range(100):
            mu = torch.randn(1, generator=g, dtype=DT) * 2
            var = torch.rand(1, generator=g, dtype=DT).clamp(1e-3, 1 - 1e-3)
            z = mu + var.sqrt() * torch.randn(n, 1, generator=g, dtype=DT)
            post = PosteriorParams(*([None] * 8), mu, var)
            samples = post.log_q(z) - log_prior(z)
            se = samples.std().item() / math.sqrt(n)
            gaps.append((samples.mean().item() - gaussian_kl(mu, var).item()) / se)
        gaps = np.array(gaps)
        worst = np.abs(gaps).max()
        info["detail"] = (
            f"(largest gap {worst:.2f} SE; {int((np.abs(gaps) > 3).sum())}/100 beyond 3 SE; "
            f"mean signed gap {gaps.mean():+.3f}, rms {np.sqrt((gaps**2).mean()):.3f})"
        )
        assert worst < 3


# --- 4 and 5 ---------------------------------------------------------------------------


def _gradient_instance(small_corpus):
    model, data = small_model_and_data(small_corpus, n_pairs=2, n_frames=4, attention=True, key_dim=2,
                                       channels=2, feature_dim=4, latent_dim=3)
    with torch.no_grad():
        # Non-zero blends so that gradients actually pass through both attentions.
        model.attention.spatial.gamma.fill_(0.5)
        model.attention.channel.gamma.fill_(-0.3)
    noise = draw_noise(torch.Generator().manual_seed(0), 1, data, 3, DT)
    with torch.no_grad():
        target = model.frame_slices(model.fusion(data.frame_feats, data.query_vecs))

    def loss():
        return causal_objective(model, data, noise, target=target)[0]

    return model, loss


def _check_module(module, loss, rng):
    params = [p for p in module.parameters() if p.requires_grad]
    entries = sample_entries(params, 20, rng)
    return finite_difference_check(loss, params, entries, h=1e-6, rtol=1e-3, atol=1e-8)


def test_criterion_4_gradient_correctness(small_corpus):
    with criterion(4, "autograd vs central differences, 20 params per module") as info:
        start = time.perf_counter()
        model, loss = _gradient_instance(small_corpus)
        rng = np.random.default_rng(0)
        counts = {name: _check_module(getattr(model, name), loss, rng)
                  for name in ("fusion", "attention", "encoder", "decoder")}
        elapsed = time.perf_counter() - start
        info["detail"] = f"({counts}, {elapsed:.1f} s)"
        assert all(c >= 20 for c in counts.values()) and elapsed < 60


def test_criterion_5_attention_invariants(small_corpus):
    with criterion(5, "attention rows stochastic, gamma=0 is the attention-free encoder, gradients") as info:
        torch.manual_seed(0)
        cfg = ModelConfig(visual_dim=32, query_dim=31)
        with_att = CausalVideoSummarizer(cfg)
        without = CausalVideoSummarizer(ModelConfig(visual_dim=32, query_dim=31, attention=False))
        without.load_state_dict(with_att.state_dict())
        g = torch.Generator().manual_seed(1)
        frames = torch.randn(2, 199, 32, generator=g)
        queries = torch.randint(0, 3, (2, 31), generator=g).float()
        t = (torch.rand(2, 199, generator=g) < 0.3).float()

        x_map = with_att.fusion(frames, queries)
        rows = [with_att.attention.spatial.affinity(x_map).sum(-1), with_att.attention.channel.affinity(x_map).sum(-1)]
        worst = max((r - 1).abs().max().item() for r in rows)
        assert worst <= 1e-6

        a = with_att.encoder(with_att.feature_map(frames, queries)[1], t)
        b = without.encoder(without.feature_map(frames, queries)[1], t)
        for name in ("t_logit", "y_logits", "mu", "var"):
            assert torch.equal(getattr(a, name), getattr(b, name)), name

        model, loss = _gradient_instance(small_corpus)
        params = list(model.attention.parameters())
        n = finite_difference_check(loss, params, rtol=1e-3, atol=1e-8)
        info["detail"] = f"(max row-sum error {worst:.1e}, {n} attention params checked)"


# --- 6 and 7 ---------------------------------------------------------------------------

LEARNING = dict(n_pairs=100, seed=0)
CHANCE = 1 / 3


def _learning_run(attention: bool):
    torch.set_num_threads(1)
    config = RunConfig(**LEARNING, attention=attention)
    corpus = ds.build_cvsd(ds.synth_corpus(config.n_pairs, seed=config.seed), seed=config.seed)
    split = ds.split_corpus(corpus, seed=config.seed)
    vocab = Vocabulary.from_corpus([p for p in corpus if p.pair_id in set(split.train)])
    tensors = tensorize(corpus, vocab, make_featurizer(config.featurizer_config(len(vocab))))
    torch.manual_seed(config.seed)
    model = CausalVideoSummarizer(ModelConfig(visual_dim=config.visual_dim, query_dim=len(vocab) + 1,
                                              attention=attention))
    start = time.perf_counter()
    result = train(model, tensors.select(split.train), config.train_config(), val=tensors.select(split.val),
                   evaluate=metrics)
    elapsed = time.perf_counter() - start
    test = metrics(model, tensors.select(split.test))
    return {"history": result.history, "test": test, "seconds": elapsed, "n_train": len(split.train)}


@pytest.fixture(scope="module")
def run_with_attention():
    return _learning_run(attention=True)


@pytest.fixture(scope="module")
def run_without_attention():
    return _learning_run(attention=False)


def test_criterion_6_learning_sanity(run_with_attention):
    with criterion(6, "planted corpus: train acc >= 0.95 in 50 epochs, held-out > chance + 0.15") as info:
        run = run_with_attention
        train_acc = [r["train_accuracy"] for r in run["history"]]
        best_epoch = int(np.argmax(train_acc)) + 1
        held_out = run["test"]["accuracy"]
        info["detail"] = (
            f"(best train acc {max(train_acc):.3f} at epoch {best_epoch}, final {train_acc[-1]:.3f}; "
            f"held-out acc {held_out:.3f}; {run['n_train']} training pairs; {run['seconds']:.0f} s)"
        )
        assert len(run["history"]) == 50
        assert max(train_acc) >= 0.95
        assert held_out > CHANCE + 0.15
        assert run["seconds"] < 600


def test_criterion_7_ablation_direction(run_with_attention, run_without_attention):
    on = run_with_attention["history"][-1]["val_accuracy"]
    off = run_without_attention["history"][-1]["val_accuracy"]
    holds = "holds" if on >= off else "does not hold"
    ACCEPTANCE_LINES.append(
        f"CRITERION 7: REPORTED  attention on {on:.3f} vs off {off:.3f} final val accuracy "
        f"(seed {LEARNING['seed']}; ordering {holds}; not gated)"
    )


# --- 8 ---------------------------------------------------------------------------------


def test_criterion_8_dataset_protocol(tmp_path):
    with criterion(8, "190 pairs: 95 treated, 59 frames each, 114/38/38 split, round trip") as info:
        corpus = ds.build_cvsd(ds.synth_corpus(190, seed=0), seed=0)
        treated = [p for p in corpus if p.query_treatment == 1]
        frames = {int(np.sum(p.treatments)) for p in treated}
        split = ds.split_corpus(corpus, seed=0)
        sizes = (len(split.train), len(split.val), len(split.test))
        info["detail"] = f"({len(treated)} treated pairs, treated frames per pair {sorted(frames)}, split {sizes})"
        assert len(treated) == 95 and frames == {59}
        assert all(int(np.sum(p.treatments)) == 0 for p in corpus if p.query_treatment == 0)
        assert sizes == (114, 38, 38)
        assert_same_corpus(corpus, ds.load(ds.save(corpus, tmp_path / "cvsd.jsonl")))
        assert_same_corpus(corpus, ds.load(ds.save(corpus, tmp_path / "ref.jsonl", media_dir=tmp_path / "media")))


# --- 9 ---------------------------------------------------------------------------------


def _confusion_oracle(preds: np.ndarray, gold: np.ndarray, n_classes: int):
    """Accuracy and macro F1 for many label vectors at once (rows of ``preds`` vs one ``gold``)."""
    tp = np.stack([((preds == c) & (gold == c)).sum(1) for c in range(n_classes)], 1)
    fp = np.stack([((preds == c) & (gold != c)).sum(1) for c in range(n_classes)], 1)
    fn = np.stack([((preds != c) & (gold == c)).sum(1) for c in range(n_classes)], 1)
    denom = 2 * tp + fp + fn
    present = denom > 0
    per_class = np.where(present, 2 * tp / np.maximum(denom, 1), 0.0)
    return (preds == gold).mean(1), per_class.sum(1) / present.sum(1)


def test_criterion_9_metric_oracles():
    with criterion(9, "accuracy and macro-F1 vs confusion-matrix brute force") as info:
        n_cases = 0
        for n_classes in (1, 2, 3):
            for n in range(1, 7):
                labels = np.array(list(itertools.product(range(n_classes), repeat=n)))
                for gold in labels:
                    acc, mf1 = _confusion_oracle(labels, gold, n_classes)
                    for k, preds in enumerate(labels):
                        assert abs(accuracy(preds, gold) - acc[k]) < 1e-12
                        assert abs(f1(preds, gold) - mf1[k]) < 1e-12
                    n_cases += len(labels)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            s, n = int(rng.integers(2, 6)), int(rng.integers(1, 200))
            preds, gold = rng.integers(0, s, n), rng.integers(0, s, n)
            acc, mf1 = _confusion_oracle(preds[None], gold, s)
            assert abs(accuracy(preds, gold) - acc[0]) < 1e-12 and abs(f1(preds, gold) - mf1[0]) < 1e-12
        info["detail"] = f"({n_cases} exhaustive cases + 1000 random)"


# --- 10 --------------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    with criterion(10, "identical seeds give byte-identical datasets, histories and reports") as info:
        config = tmp_path / "config.yaml"
        config.write_text(yaml.safe_dump({
            "n_pairs": 12, "epochs": 3, "channels": 4, "feature_dim": 8, "hidden_dim": 16, "latent_dim": 4,
            "seed": 7,
        }))
        for name in ("a", "b"):
            assert cli.main(["pipeline", "--config", str(config), "--out-dir", str(tmp_path / name)]) == 0
        files = ["corpus.jsonl", "cvsd.jsonl", "splits.json", "vocab.txt", "history.jsonl", "eval_report.jsonl"]
        same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
        info["detail"] = f"({len(same)}/{len(files)} files identical)"
        assert same == files
        assert len((tmp_path / "a" / "history.jsonl").read_text().splitlines()) == 4
        json.loads((tmp_path / "a" / "eval_report.jsonl").read_text().splitlines()[-1])
