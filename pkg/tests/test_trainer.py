import math

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
from hypothesis import given
from hypothesis import strategies as st

from vtss import model as M
from vtss import pretext as P
from vtss import trainer as TR
from vtss import transforms as T
from vtss.datasets import LabeledImageSet
from vtss.errors import RangeError, SpecError, TrainingError

from conftest import toy_set


class TestSchedule:
    def test_plateaus(self):
        spec = TR.PAPER_OPTIMIZER
        assert [TR.lr_at(spec, e) for e in (0, 59, 60, 120, 180, 199)] == pytest.approx(
            [0.1, 0.1, 0.002, 4e-5, 8e-7, 8e-7], rel=1e-12)

    def test_staged(self):
        spec = TR.OptimizerSpec(schedule="staged")
        assert [TR.lr_at(spec, e) for e in (0, 60, 120, 199)] == pytest.approx([0.1, 0.002, 0.002, 0.002])

    def test_out_of_range(self):
        for e in (-1, 200):
            with pytest.raises(RangeError):
                TR.lr_at(TR.PAPER_OPTIMIZER, e)

    @given(st.lists(st.integers(1, 49), min_size=0, max_size=4, unique=True))
    def test_monotone_plateaus(self, ms):
        spec = TR.OptimizerSpec(milestones=sorted(ms), epochs=50)
        lrs = [TR.lr_at(spec, e) for e in range(50)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        assert len(set(lrs)) == len(ms) + 1

    def test_bad_milestones(self):
        with pytest.raises(SpecError):
            TR.OptimizerSpec(milestones=(60, 60, 180))
        with pytest.raises(SpecError):
            TR.OptimizerSpec(milestones=(60, 200))


def separable():
    x = np.array([[[[0.9]]], [[[0.8]]], [[[0.1]]], [[[0.2]]]], np.float32)
    return LabeledImageSet(x, [1, 1, 0, 0], 2)


class Linear(nn.Module):
    def __init__(self):
        super().__init__()
        self.fc = nn.Linear(1, 2)
        with torch.no_grad():
            self.fc.weight.zero_()
            self.fc.bias.zero_()

    def forward(self, x):
        return self.fc(x.flatten(1) - 0.5)


class TestSteps:
    def test_loss_decreases(self):
        spec = TR.OptimizerSpec(base_lr=0.01, milestones=(), epochs=1, batch_size=1, momentum=0.9,
                                weight_decay=0)
        model = Linear()
        data = separable()
        losses = []
        opt = TR.make_optimizer(model, spec)
        for i in range(4):
            loss = F.cross_entropy(model(TR.to_tensor(data.images)), torch.from_numpy(data.labels.copy()))
            losses.append(loss.item())
            x = TR.to_tensor(data.images[i:i + 1])
            step_loss = F.cross_entropy(model(x), torch.from_numpy(data.labels[i:i + 1].copy()))
            opt.zero_grad()
            step_loss.backward()
            opt.step()
        assert all(b < a for a, b in zip(losses, losses[1:]))
        report = TR.train(Linear(), data, spec, seed=0)
        assert len(report.losses) == 1 and math.isfinite(report.losses[0])

    def test_plain_sgd_step(self):
        torch.manual_seed(0)
        model = nn.Sequential(nn.Linear(5, 3)).double()
        spec = TR.OptimizerSpec(base_lr=0.05, momentum=0.0, weight_decay=0.0, milestones=(), epochs=1)
        opt = TR.make_optimizer(model, spec)
        x, y = torch.randn(4, 5, dtype=torch.float64), torch.tensor([0, 1, 2, 0])
        loss = F.cross_entropy(model(x), y)
        opt.zero_grad()
        loss.backward()
        before = [p.detach().clone() for p in model.parameters()]
        grads = [p.grad.detach().clone() for p in model.parameters()]
        opt.step()
        for b, g, p in zip(before, grads, model.parameters()):
            torch.testing.assert_close(p.detach() - b, -0.05 * g, rtol=1e-7, atol=0)

    def test_zero_gradient_no_op(self):
        model = M.build_backbone(M.ArchitectureSpec(1, 1, 4, (1, 8, 8), 2), 0)
        spec = TR.OptimizerSpec(momentum=0.9, weight_decay=0.0, milestones=(), epochs=1)
        opt = TR.make_optimizer(model, spec)
        before = M.param_hash(model)
        for p in model.parameters():
            p.grad = torch.zeros_like(p)
        opt.step()
        assert M.param_hash(model) == before

    def test_no_decay_on_batch_norm(self):
        model = M.build_backbone(M.ArchitectureSpec(1, 2, 4, (1, 8, 8), 2), 0)
        opt = TR.make_optimizer(model, TR.PAPER_OPTIMIZER)
        decay, no_decay = opt.param_groups
        bn_params = {id(p) for m in model.modules() if isinstance(m, nn.BatchNorm2d)
                     for p in m.parameters()}
        assert {id(p) for p in no_decay["params"]} == bn_params
        assert no_decay["weight_decay"] == 0 and decay["weight_decay"] == 5e-4

    def test_non_finite_loss(self):
        model = Linear()
        with torch.no_grad():
            model.fc.bias.fill_(float("nan"))
        with pytest.raises(TrainingError, match="epoch=0"):
            TR.train(model, separable(), TR.OptimizerSpec(milestones=(), epochs=1))


def tiny_backbone(outputs, side=12, seed=0):
    return M.build_backbone(M.ArchitectureSpec(2, 1, 4, (1, side, side), outputs), seed)


class TestTrain:
    spec = TR.OptimizerSpec(base_lr=0.05, milestones=(1,), epochs=2, batch_size=8)

    def test_report_lengths_and_determinism(self):
        data, test = toy_set(4), toy_set(2, seed=9)
        task = P.make_rotation_task()
        reports = [TR.train(tiny_backbone(4), data, self.spec, seed=3, task=task, test=test)
                   for _ in range(2)]
        assert len(reports[0].losses) == len(reports[0].test_accuracy) == 2
        assert reports[0].digest() == reports[1].digest()
        assert reports[0].final_hash == reports[1].final_hash

    def test_report_json(self):
        rep = TR.TrainReport([1.0, 0.5], [0.2, 0.4], 3.0, "abc")
        assert TR.TrainReport.from_json(rep.to_json()) == rep

    def test_injection_modes(self):
        data = toy_set(4)
        task = P.make_rotation_task()
        inj = P.ConflictInjectionSpec((T.rot(1),))
        hashes = {}
        for mode in ("per_epoch", "fixed"):
            rep = TR.train(tiny_backbone(4), data, self.spec, seed=1, task=task, injection=inj,
                           injection_mode=mode)
            hashes[mode] = rep.final_hash
        assert hashes["per_epoch"] != hashes["fixed"]
        with pytest.raises(SpecError):
            TR.train(tiny_backbone(4), data, self.spec, injection=inj, injection_mode="once")

    def test_augment_changes_result(self):
        data = toy_set(4)
        a = TR.train(tiny_backbone(3), data, self.spec, seed=1)
        b = TR.train(tiny_backbone(3), data, self.spec, seed=1, augment=True)
        assert a.final_hash != b.final_hash


class TestEvaluate:
    def test_untrained_is_chance(self):
        test = toy_set(400, 3, 12, seed=4)
        acc = TR.evaluate_accuracy(tiny_backbone(4), test, task=P.make_rotation_task())
        assert abs(acc - 0.25) <= 0.05

    def test_memorizes_ten(self):
        data = toy_set(4, 3, 12, seed=0).subset(range(10))
        model = tiny_backbone(3)
        spec = TR.OptimizerSpec(base_lr=0.05, milestones=(), epochs=80, batch_size=10,
                                weight_decay=0)
        TR.train(model, data, spec, seed=0)
        assert TR.evaluate_accuracy(model, data) == 1.0

    def test_order_invariant(self):
        test = toy_set(10, seed=5)
        model = tiny_backbone(3)
        perm = np.random.default_rng(0).permutation(len(test))
        assert TR.evaluate_accuracy(model, test) == TR.evaluate_accuracy(model, test.subset(perm))

    def test_pretext_stream(self):
        test = toy_set(5, seed=5)
        x, y = TR.pretext_stream(test, P.make_rotation_task(), shard_batch=4)
        assert len(x) == 4 * len(test) and np.bincount(y).tolist() == [len(test)] * 4
