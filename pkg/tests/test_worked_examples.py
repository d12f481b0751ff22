"""Small hand-checkable cases, one per behaviour."""

import dataclasses
import math

import numpy as np
import pytest

from hdpo import vocab
from hdpo.distill import (
    DistillationSet,
    collect_cliffs,
    hdpo_step_loss,
    jsd_distill_loss,
    privileged_rollouts,
    teacher_topk,
)
from hdpo.grpo import ClipConfig, RolloutGroup, grpo_loss
from hdpo.numerics import lemma1_bound_holds, softmax
from hdpo.policy import (
    AdamState,
    AdamWConfig,
    Context,
    Gradient,
    LogitLoss,
    TabularPolicy,
    TinyNetPolicy,
    Trajectory,
    apply_update,
    clip_by_global_norm,
    grad_of_scalar_loss,
    logits,
    sample_batch,
    sample_rollout,
    trajectory_logprob,
)
from hdpo.runner.config import apply_overrides, config_from_dict
from hdpo.runner.evaluate import evaluate
from hdpo.runner.io import read_metrics
from hdpo.runner.train import init_policy, warmstart
from hdpo.tasks import generate_task, privileged_prompt, verify
from hdpo.theory import EnumerableSpace, build_gibbs, conditional_policy, hard_threshold_limit_check, rejection_sampling_check

V = vocab.VOCAB_SIZE


def one_step_space(probs, correct):
    v = len(probs)
    pol = TabularPolicy(v, table={(0,): np.log(np.asarray(probs, dtype=float))})
    return EnumerableSpace(pol, (0,), lambda t: int(t[0] in correct), max_len=1, eos=v - 1)


def scripted(rows: dict) -> TabularPolicy:
    """Full-context tabular policy that puts almost all mass on the scripted token."""
    pol = TabularPolicy(V)
    for ctx, tok in rows.items():
        z = np.full(V, -60.0)
        z[tok] = 60.0
        pol.set_row(ctx, z)
    return pol


def answer_rows(task, prefix):
    return {prefix + task.reference_completion()[:t]: tok for t, tok in enumerate(task.reference_completion())}


class TestJsdTail:
    def test_unhalved_divergence_sum_gives_rest_mass_times_ln2(self):
        # with the two KL terms added without the 1/2 weights, an off-support
        # student mass of 0.1 contributes 0.1 ln 2 ~= 0.0693
        q_tail = 0.1
        m_tail = 0.5 * q_tail
        assert q_tail * math.log(q_tail / m_tail) == pytest.approx(0.0693147, abs=1e-7)


class TestLogitPerturbation:
    def test_zero_perturbation(self):
        kl, bound, holds = lemma1_bound_holds(np.array([0.3, -1.0, 2.0]), np.zeros(3))
        assert (kl, bound, holds) == (0.0, 0.0, True)

    def test_small_perturbation_at_uniform(self):
        kl, bound, holds = lemma1_bound_holds(np.zeros(4), np.array([0.1, 0.0, 0.0, 0.0]))
        assert bound == pytest.approx(0.005, abs=1e-15)
        assert holds and 0 < kl < 0.005


class TestPolicyBasics:
    def test_hand_set_tiny_net(self):
        params = {
            "embed": np.array([[1.0], [-1.0]]),
            "w1": np.array([[1.0]]),
            "b1": np.array([0.0]),
            "w2": np.array([[2.0, -2.0]]),
            "b2": np.array([0.5, 0.0]),
        }
        net = TinyNetPolicy(2, window=1, embed_dim=1, hidden=1, params=params)
        t = math.tanh(1.0)
        np.testing.assert_allclose(logits(net, (0,)), [2 * t + 0.5, -2 * t], atol=1e-15)
        np.testing.assert_allclose(logits(net, (0, 1)), [-2 * t + 0.5, 2 * t], atol=1e-15)

    def test_concentrated_policy_always_takes_argmax(self):
        pol = TabularPolicy(3, window=1, table={(t,): np.array([50.0, -50.0, -50.0]) for t in range(3)})
        u = np.random.default_rng(0).random((500, 4))
        trajs = sample_batch(pol, [Context((1,))] * 500, 4, 1.0, u, eos=2)
        assert {tr.tokens for tr in trajs} == {(0, 0, 0, 0)}

    def test_uniform_logprob_closed_form(self):
        pol = TabularPolicy(4)
        tr = Trajectory(Context((0,)), (1, 2, 3), np.zeros(3))
        assert trajectory_logprob(pol, tr) == pytest.approx(3 * math.log(0.25), abs=1e-14)
        assert trajectory_logprob(pol, Trajectory(Context((0,)), (), np.zeros(0))) == 0.0

    def test_sampled_logprobs_match_recomputation(self):
        net = TinyNetPolicy.init(np.random.default_rng(1), vocab_size=V, window=4, embed_dim=4, hidden=8)
        tr = sample_rollout(net, Context((3, 4, 5)), 6, 1.0, np.random.default_rng(2))
        assert trajectory_logprob(net, tr) == pytest.approx(float(tr.logprobs.sum()), abs=1e-10)

    def test_constant_loss_has_zero_gradient(self):
        net = TinyNetPolicy.init(np.random.default_rng(0), vocab_size=5, window=2, embed_dim=2, hidden=3)
        g = grad_of_scalar_loss(net, LogitLoss(3.0, [], np.zeros((0, 5))))
        assert g.max_abs() == 0.0

    def test_zero_gradient_without_decay_leaves_parameters(self):
        net = TinyNetPolicy.init(np.random.default_rng(0), vocab_size=5, window=2, embed_dim=2, hidden=3)
        zero = Gradient({k: np.zeros_like(v) for k, v in net.params.items()})
        new, _ = apply_update(net, zero, AdamState(), lr=0.1, cfg=AdamWConfig(weight_decay=0.0))
        for k in net.params:
            np.testing.assert_array_equal(new.params[k], net.params[k])

    def test_norm_ten_clips_to_one(self):
        clipped, norm = clip_by_global_norm(Gradient({"a": np.array([6.0, 8.0])}), 1.0)
        assert norm == 10.0
        assert clipped.global_norm() == pytest.approx(1.0, abs=1e-9)


class TestSurrogate:
    task = generate_task("copy-reverse", 1, 0)

    def group(self, z, token, ratio, adv):
        pol = TabularPolicy(3, table={(0,): np.asarray(z, dtype=float)})
        new = math.log(softmax(z)[token])
        tr = Trajectory(Context((0,)), (token,), np.array([new - math.log(ratio)]))
        return pol, RolloutGroup(self.task, [tr], np.array([0]), np.array([adv]))

    def test_ratio_above_trust_region_uses_clipped_factor(self):
        pol, grp = self.group([0.0, 0.0, 0.0], 1, 1.5, 1.0)
        loss, diag = grpo_loss([grp], pol, ClipConfig(epsilon=0.2))
        assert loss.value == pytest.approx(-1.2, abs=1e-12)
        assert diag.clip_fraction == 1.0
        assert grad_of_scalar_loss(pol, loss).max_abs() == 0.0

    def test_single_token_by_hand(self):
        z = [1.0, 0.0, -1.0]
        pol, grp = self.group(z, 0, 0.9, -0.5)
        loss, _ = grpo_loss([grp], pol)
        assert loss.value == pytest.approx(0.45, abs=1e-12)
        # L = -rho * A, so dL/dz = -A * rho * (onehot - softmax(z))
        expected = 0.45 * (np.array([1.0, 0.0, 0.0]) - softmax(z))
        np.testing.assert_allclose(grad_of_scalar_loss(pol, loss).grads[(0,)], expected, atol=1e-14)


class TestCliffsAndDistillation:
    def test_cap_keeps_first_in_batch_order(self):
        tasks = [generate_task("modular-chain", 1, s) for s in range(40)]
        groups = [RolloutGroup(t, [], np.zeros(4, dtype=np.int64)) for t in tasks]
        assert collect_cliffs(groups, 32) == tasks[:32]
        assert collect_cliffs(groups[:5], 32) == tasks[:5]

    def test_privileged_teacher_outscores_itself_unprivileged(self):
        cfg = config_from_dict(apply_overrides({}, [
            "seed=5", "policy.window=6", "policy.embed_dim=8", "policy.hidden=16",
            "tasks.families=[copy-reverse]", "tasks.max_len=6",
            "warmstart.steps=150", "warmstart.batch_size=16", "warmstart.lr=0.01",
            "warmstart.privileged_difficulties=[1,2,3]", "warmstart.plain_difficulties=[1]",
        ]))
        policy = warmstart(init_policy(cfg), cfg)
        rng = np.random.default_rng(9)
        priv = plain = 0
        for s in range(40):
            task = generate_task("copy-reverse", 1 + s % 3, 1000 + s)
            u = rng.random((8, 6))
            priv += sum(tr.reward for tr in privileged_rollouts(policy, task, 8, 1.0, np.random.default_rng(s), 6))
            plain += sum(verify(task, tr.tokens) for tr in sample_batch(policy, [task.context()] * 8, 6, 1.0, u))
        assert priv > plain

    def test_empty_privileged_block_makes_teacher_equal_student(self):
        task = dataclasses.replace(generate_task("copy-reverse", 2, 4), ground_truth=())
        net = TinyNetPolicy.init(np.random.default_rng(0), vocab_size=V, window=6, embed_dim=3, hidden=5)
        tr = sample_rollout(net, task.context(), 5, 1.0, np.random.default_rng(1))
        loss = jsd_distill_loss(DistillationSet([(task, tr)]), net, net, V)
        assert abs(loss.value) < 1e-15
        assert np.abs(loss.dlogits).max() < 1e-15

    def test_single_token_by_hand(self):
        task = generate_task("copy-reverse", 1, 0)
        zt, zs = np.zeros(V), np.zeros(V)
        zt[3], zs[3], zs[4] = 2.0, 0.5, 1.0
        teacher, student = TabularPolicy(V), TabularPolicy(V)
        teacher.set_row(privileged_prompt(task).tokens, zt)
        student.set_row(task.prompt, zs)
        tr = Trajectory(task.context(), (3,), np.zeros(1))
        p, q = softmax(zt), softmax(zs)
        m = 0.5 * (p + q)
        expected = 0.5 * float(np.sum(p * np.log(p / m))) + 0.5 * float(np.sum(q * np.log(q / m)))
        loss = jsd_distill_loss(DistillationSet([(task, tr)]), teacher, student, V)
        assert loss.value == pytest.approx(expected, abs=1e-14)

    def test_step_loss_arithmetic(self):
        assert hdpo_step_loss(0.2, 0.5, 0.01) == pytest.approx(0.205, abs=1e-15)
        assert hdpo_step_loss(0.2, 0.5, 0.0) == 0.2

    def test_dominant_logit_gives_point_mass(self):
        pol = TabularPolicy(5, table={(0,): np.array([0.0, 9.0, 0.0, 0.0, 0.0])})
        t = teacher_topk(pol, (0,), 1)
        assert t.support == (1,) and t.probs.tolist() == [1.0]

    def test_topk_against_sort_and_renormalize(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            z = rng.normal(size=8)
            pol = TabularPolicy(8, table={(0,): z})
            t = teacher_topk(pol, (0,), 4)
            p = np.exp(z) / np.exp(z).sum()
            order = sorted(range(8), key=lambda i: -z[i])[:4]
            assert list(t.support) == order
            np.testing.assert_allclose(t.probs, p[order] / p[order].sum(), atol=1e-15)


class TestGibbsExamples:
    def test_constant_reward_returns_reference(self):
        probs = [0.1, 0.2, 0.3, 0.4]
        g = build_gibbs(one_step_space(probs, {0, 1, 2, 3}), 1.0)
        np.testing.assert_allclose(g.probs, g.ref_probs, atol=1e-15)

    @pytest.mark.parametrize("beta", [1.0, 0.5, 0.1])
    def test_correct_to_incorrect_weight_ratio(self, beta):
        g = build_gibbs(one_step_space([0.25, 0.25, 0.5], {0}), beta)
        i0, i1 = g.trajectories.index((0,)), g.trajectories.index((1,))
        assert g.probs[i0] / g.probs[i1] == pytest.approx(math.exp(1 / beta), rel=1e-12)

    def test_all_correct_conditional_is_reference(self):
        trajs, cond = conditional_policy(one_step_space([0.1, 0.2, 0.7], {0, 1, 2}))
        np.testing.assert_allclose(cond, [0.1, 0.2, 0.7][: len(cond)], atol=1e-15)
        tvs = hard_threshold_limit_check(one_step_space([0.1, 0.2, 0.7], {0, 1, 2}), [1.0, 0.1, 0.01])
        assert max(tvs) <= 1e-12

    def test_tv_sequence_matches_closed_form(self):
        p = 0.25
        tvs = hard_threshold_limit_check(one_step_space([0.25, 0.25, 0.5], {0}), [1.0, 0.1, 0.01])
        expected = [(1 - p) / ((1 - p) + p * math.exp(1 / b)) for b in (1.0, 0.1, 0.01)]
        # below ~1e-17 the correct mass rounds to 1 and only half the gap is visible
        np.testing.assert_allclose(tvs, expected, rtol=1e-9, atol=1e-30)
        assert tvs[0] > tvs[1] > tvs[2] and tvs[2] < 1e-9

    def test_deterministic_reference_rejection_is_exact(self):
        pol = TabularPolicy(3, table={(0,): np.array([60.0, -60.0, -60.0])})
        space = EnumerableSpace(pol, (0,), lambda t: int(t == (0,)), max_len=1, eos=2)
        rep = rejection_sampling_check(space, 2000, np.random.default_rng(0))
        assert rep.tv == 0.0


class TestEvaluationExamples:
    tasks = [generate_task("copy-reverse", 1 + i % 2, 50 + i) for i in range(6)]

    def policy(self, solved):
        rows = {}
        for i, t in enumerate(self.tasks):
            rows.update(answer_rows(t, t.prompt) if i in solved else {t.prompt: vocab.EOS})
        return scripted(rows)

    def test_always_and_never_correct(self):
        assert evaluate(self.policy(set(range(6))), self.tasks, 8, [1, 4, 8], max_len=10) == {1: 1.0, 4: 1.0, 8: 1.0}
        assert evaluate(self.policy(set()), self.tasks, 8, [1, 4, 8], max_len=10) == {1: 0.0, 4: 0.0, 8: 0.0}

    def test_half_solved_set(self):
        out = evaluate(self.policy({0, 2, 4}), self.tasks, 8, [1, 4, 8], max_len=10)
        assert out == {1: 0.5, 4: 0.5, 8: 0.5}


def test_empty_metrics_file_reads_as_empty(tmp_path):
    path = tmp_path / "metrics.jsonl"
    path.write_text("")
    assert read_metrics(path) == []
