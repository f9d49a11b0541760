"""Output averaging, greedy combination search, scorers."""

import math
import sys

import numpy as np
import pytest

from textsr.ensemble import (
    Combination,
    EvalItem,
    ExternalCommandScorer,
    GreedySearchError,
    ModelPool,
    OcrScorerError,
    PsnrScorer,
    average_outputs,
    char_accuracy,
    greedy_search,
    levenshtein,
    read_ground_truth,
    score_combination,
)
from textsr.metrics import psnr
from textsr.network import init_network, parse_spec


def make_items(rng, n=2, h=16, w=20):
    return [EvalItem(f"im{i}", rng.random((h, w)), rng.random((h, w)), text=f"T{i}")
            for i in range(n)]


def noisy(hr, rng, sigma):
    return np.clip(hr + rng.normal(0.0, sigma, hr.shape), 0.0, 1.0)


class TestAverageOutputs:
    def test_single_is_itself(self):
        x = np.random.default_rng(0).random((5, 5))
        out = average_outputs([x])
        assert np.array_equal(out, x)
        assert out is not x  # fresh copy

    def test_copies_reproduce_exactly(self):
        x = np.random.default_rng(1).random((6, 7))
        for k in (2, 3, 5):
            assert np.array_equal(average_outputs([x] * k), x)

    def test_two_outputs_scalar_arithmetic(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((4, 4)), rng.random((4, 4))
        got = average_outputs([a, b])
        for i in range(4):
            for j in range(4):
                assert got[i, j] == (a[i, j] + b[i, j]) / 2.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        outs = [rng.random((3, 3)) for _ in range(4)]
        base = average_outputs(outs)
        assert np.max(np.abs(average_outputs(outs[::-1]) - base)) <= 1e-12

    def test_scale_consistency(self):
        rng = np.random.default_rng(4)
        outs = [rng.random((3, 3)) for _ in range(3)]
        assert np.array_equal(average_outputs([2.0 * o for o in outs]),
                              2.0 * average_outputs(outs))
        k = 1.7
        assert np.max(np.abs(average_outputs([k * o for o in outs])
                             - k * average_outputs(outs))) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            average_outputs([np.ones((2, 2)), np.ones((2, 3))])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            average_outputs([])


class TestCombination:
    def test_members_sorted_multiset(self):
        c = Combination(("b", "a", "b"))
        assert c.members == ("a", "b", "b")
        assert c.size == 3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Combination(())


class TestScoreCombination:
    def _pool(self, rng, n_models=3):
        items = make_items(rng)
        models = {}
        for m in range(n_models):
            models[f"m{m}"] = [noisy(item.hr, rng, 0.05 * (m + 1)) for item in items]
        return ModelPool(models, items)

    def test_singleton_equals_own_score(self):
        rng = np.random.default_rng(5)
        pool = self._pool(rng)
        scorer = PsnrScorer()
        own = scorer(pool.outputs("m0"), pool.eval_items)
        assert score_combination(Combination(("m0",)), pool, scorer) == own

    def test_duplicate_of_single_identical(self):
        rng = np.random.default_rng(6)
        pool = self._pool(rng)
        scorer = PsnrScorer()
        s1 = score_combination(Combination(("m1",)), pool, scorer)
        s2 = score_combination(Combination(("m1", "m1")), pool, scorer)
        assert s1 == s2

    def test_full_multiset_duplication_invariant(self):
        rng = np.random.default_rng(7)
        pool = self._pool(rng)
        scorer = PsnrScorer()
        ab = score_combination(Combination(("m0", "m1")), pool, scorer)
        aabb = score_combination(Combination(("m0", "m0", "m1", "m1")), pool, scorer)
        assert ab == aabb

    def test_pair_matches_hand_computed_psnr(self):
        rng = np.random.default_rng(8)
        items = make_items(rng, n=2)
        out_a = [noisy(i.hr, rng, 0.1) for i in items]
        out_b = [noisy(i.hr, rng, 0.1) for i in items]
        pool = ModelPool({"a": out_a, "b": out_b}, items)
        got = score_combination(Combination(("a", "b")), pool, PsnrScorer())
        want = np.mean([psnr((oa + ob) / 2.0, item.hr)
                        for oa, ob, item in zip(out_a, out_b, items)])
        assert abs(got - want) <= 1e-12

    def test_unknown_id_rejected(self):
        rng = np.random.default_rng(9)
        pool = self._pool(rng)
        with pytest.raises(KeyError, match="ghost"):
            score_combination(Combination(("ghost",)), pool, PsnrScorer())


class TestGreedySearch:
    def test_degenerate_single_model_pool(self):
        rng = np.random.default_rng(10)
        items = make_items(rng)
        pool = ModelPool({"a": [noisy(i.hr, rng, 0.1) for i in items]}, items)
        rounds, best = greedy_search(pool, PsnrScorer(), max_rounds=3)
        assert [r.combination.members for r in rounds] == [
            ("a",), ("a", "a"), ("a", "a", "a")]
        assert all(r.score == rounds[0].score for r in rounds)
        # tie across rounds resolved to the fewest members
        assert best.combination.size == 1

    def test_dominant_model_wins(self):
        rng = np.random.default_rng(11)
        items = make_items(rng)
        models = {
            "perfect": [i.hr.copy() for i in items],
            "noise1": [rng.random(i.hr.shape) for i in items],
            "noise2": [rng.random(i.hr.shape) for i in items],
        }
        pool = ModelPool(models, items)
        rounds, best = greedy_search(pool, PsnrScorer(), max_rounds=4)
        assert set(best.combination.members) == {"perfect"}
        assert math.isinf(best.score)

    def test_round_k_has_k_members(self):
        rng = np.random.default_rng(12)
        items = make_items(rng, n=3)
        models = {f"m{j}": [noisy(i.hr, rng, 0.02 + 0.03 * j) for i in items]
                  for j in range(5)}
        pool = ModelPool(models, items)
        rounds, best = greedy_search(pool, PsnrScorer(), max_rounds=6)
        for k, sc in enumerate(rounds, 1):
            assert sc.combination.size == k

    def test_overall_best_at_least_best_single(self):
        rng = np.random.default_rng(13)
        for trial in range(5):
            items = make_items(rng, n=2)
            models = {f"m{j}": [noisy(i.hr, rng, 0.05 + 0.05 * rng.random()) for i in items]
                      for j in range(4)}
            pool = ModelPool(models, items)
            scorer = PsnrScorer()
            singles = [score_combination(Combination((mid,)), pool, scorer)
                       for mid in pool.ids()]
            rounds, best = greedy_search(pool, scorer, max_rounds=5)
            assert best.score >= max(singles)
            assert rounds[0].score == max(singles)

    def test_all_perfect_pool_ties_break_to_smallest_id(self):
        rng = np.random.default_rng(14)
        items = make_items(rng)
        models = {name: [i.hr.copy() for i in items] for name in ("zeta", "alpha", "mid")}
        pool = ModelPool(models, items)
        rounds, best = greedy_search(pool, PsnrScorer(), max_rounds=3)
        assert all(math.isinf(r.score) for r in rounds)
        assert rounds[0].combination.members == ("alpha",)
        assert rounds[1].combination.members == ("alpha", "alpha")
        assert best.combination.members == ("alpha",)

    def test_scorer_failure_aborts_with_partial(self):
        rng = np.random.default_rng(15)
        items = make_items(rng)
        pool = ModelPool({"a": [noisy(i.hr, rng, 0.1) for i in items],
                          "b": [noisy(i.hr, rng, 0.1) for i in items]}, items)
        calls = {"n": 0}

        def flaky(preds, eval_items):
            calls["n"] += 1
            if calls["n"] > 3:
                raise OcrScorerError("boom", "im0")
            return 1.0

        with pytest.raises(GreedySearchError) as err:
            greedy_search(pool, flaky, max_rounds=4)
        assert len(err.value.partial_rounds) == 1  # round 1 completed (2 calls)

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            greedy_search(ModelPool({}, []), PsnrScorer())

    def test_network_models_cached_outputs(self):
        rng = np.random.default_rng(16)
        items = make_items(rng, n=2, h=20, w=20)
        nets = {f"n{j}": init_network(parse_spec("4(3)-2(3)-1(3)"), 0.05, seed=j)
                for j in range(2)}
        pool = ModelPool(nets, items)
        outs1 = pool.outputs("n0")
        outs2 = pool.outputs("n0")
        assert outs1 is outs2  # cached
        assert outs1[0].shape == items[0].hr.shape
        rounds, best = greedy_search(pool, PsnrScorer(), max_rounds=3)
        assert best.score >= rounds[0].score


class TestEditDistance:
    @pytest.mark.parametrize("a,b,d", [
        ("h3llo", "hello", 1),
        ("", "abc", 3),
        ("abc", "", 3),
        ("kitten", "sitting", 3),
        ("same", "same", 0),
    ])
    def test_levenshtein(self, a, b, d):
        assert levenshtein(a, b) == d

    def test_char_accuracy_cases(self):
        assert char_accuracy("h3llo", "hello") == 1.0 - 1.0 / 5.0
        assert char_accuracy("", "hello") == 0.0
        assert char_accuracy("hello", "hello") == 1.0
        assert char_accuracy("x", "") == 0.0  # max(len(truth), 1) guards division


class TestExternalScorer:
    def _items(self, rng, text):
        return [EvalItem("im0", rng.random((8, 8)), rng.random((8, 8)), text=text)]

    def test_echoing_truth_scores_one(self, tmp_path):
        rng = np.random.default_rng(17)
        items = self._items(rng, "HELLO")
        cmd = f'{sys.executable} -c "print(\'HELLO\')" {{image}}'
        scorer = ExternalCommandScorer(cmd, tmp_path)
        assert scorer([items[0].hr], items) == 1.0
        assert (tmp_path / "im0.pgm").exists()

    def test_empty_output_scores_zero(self, tmp_path):
        rng = np.random.default_rng(18)
        items = self._items(rng, "HELLO")
        cmd = f'{sys.executable} -c "print()" {{image}}'
        scorer = ExternalCommandScorer(cmd, tmp_path)
        assert scorer([items[0].hr], items) == 0.0

    def test_missing_placeholder_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="placeholder"):
            ExternalCommandScorer("ocr", tmp_path)

    def test_command_not_found(self, tmp_path):
        rng = np.random.default_rng(19)
        items = self._items(rng, "X")
        scorer = ExternalCommandScorer("definitely-not-a-command-xyz {image}", tmp_path)
        with pytest.raises(OcrScorerError, match="not found") as err:
            scorer([items[0].hr], items)
        assert err.value.image_id == "im0"

    def test_nonzero_exit(self, tmp_path):
        rng = np.random.default_rng(20)
        items = self._items(rng, "X")
        cmd = f'{sys.executable} -c "import sys; sys.exit(3)" {{image}}'
        scorer = ExternalCommandScorer(cmd, tmp_path)
        with pytest.raises(OcrScorerError, match="exited"):
            scorer([items[0].hr], items)

    def test_skip_policy(self, tmp_path):
        script = tmp_path / "fake_ocr.py"
        script.write_text(
            "import sys\n"
            "path = sys.argv[1]\n"
            "if 'im0' in path:\n"
            "    sys.exit(1)\n"
            "print('ABC')\n")
        rng = np.random.default_rng(21)
        items = [EvalItem("im0", rng.random((8, 8)), rng.random((8, 8)), text="ABC"),
                 EvalItem("im1", rng.random((8, 8)), rng.random((8, 8)), text="ABC")]
        cmd = f"{sys.executable} {script} {{image}}"
        skip = ExternalCommandScorer(cmd, tmp_path, on_error="skip")
        assert skip([i.hr for i in items], items) == 1.0
        strict = ExternalCommandScorer(cmd, tmp_path, on_error="abort")
        with pytest.raises(OcrScorerError):
            strict([i.hr for i in items], items)

    def test_missing_truth_rejected(self, tmp_path):
        rng = np.random.default_rng(22)
        items = [EvalItem("im0", rng.random((8, 8)), rng.random((8, 8)), text=None)]
        cmd = f'{sys.executable} -c "print(1)" {{image}}'
        scorer = ExternalCommandScorer(cmd, tmp_path)
        with pytest.raises(OcrScorerError, match="ground-truth"):
            scorer([items[0].hr], items)


class TestGroundTruthFile:
    def test_parse(self, tmp_path):
        path = tmp_path / "gt.tsv"
        path.write_text("im0\tHELLO WORLD\nim1\tA\tB\n", encoding="utf-8")
        truths = read_ground_truth(path)
        assert truths == {"im0": "HELLO WORLD", "im1": "A\tB"}

    def test_missing_tab_rejected(self, tmp_path):
        path = tmp_path / "gt.tsv"
        path.write_text("oops\n")
        with pytest.raises(ValueError, match="TAB"):
            read_ground_truth(path)
