"""Network tests: per-neuron forward oracle, finite-difference gradients,
hand-stepped optimizer sequences, and the serialization round trip."""

import math

import numpy as np
import pytest

from capinv.network import (
    DEFAULT_LEARNING_RATES,
    Adam,
    Mlp,
    Momentum,
    TrainingError,
    TrainSchedule,
    backward,
    forward,
    half_sse_loss,
    load_mlp,
    make_optimizer,
    minibatch_stream,
    save_mlp,
    train,
    write_mlp_block,
    read_mlp_block,
)


def loop_forward(net: Mlp, batch: np.ndarray) -> np.ndarray:
    """Scalar-arithmetic reimplementation of the forward pass."""
    out = []
    for row in batch:
        a = list(row)
        for w, b, name in zip(net.weights, net.biases, net.activations):
            z = []
            for j in range(w.shape[1]):
                s = b[j]
                for i in range(w.shape[0]):
                    s += a[i] * w[i, j]
                z.append(math.tanh(s) if name == "tanh" else s)
            a = z
        out.append(a)
    return np.asarray(out)


def random_net(sizes, activations, seed) -> Mlp:
    return Mlp.init(sizes, activations, np.random.default_rng(seed))


def fd_gradient(f, arr, h=1e-5):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        keep = arr[idx]
        arr[idx] = keep + h
        hi = f()
        arr[idx] = keep - h
        lo = f()
        arr[idx] = keep
        g[idx] = (hi - lo) / (2.0 * h)
    return g


def relative_error(analytic, numeric):
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-3)
    return np.max(np.abs(analytic - numeric) / scale)


class TestForward:
    @pytest.mark.parametrize(
        "sizes,acts,seed",
        [
            ((3, 4, 2), ("tanh", "linear"), 0),
            ((2, 5, 5, 3), ("tanh", "tanh", "tanh"), 1),
            ((4, 1), ("linear",), 2),
        ],
    )
    def test_matches_per_neuron_loop(self, sizes, acts, seed):
        net = random_net(sizes, acts, seed)
        batch = np.random.default_rng(seed + 100).normal(size=(6, sizes[0]))
        cache = forward(net, batch)
        assert len(cache) == len(sizes)
        assert np.array_equal(cache[0], batch)
        assert np.allclose(cache[-1], loop_forward(net, batch), rtol=1e-12, atol=1e-14)

    def test_rejects_wrong_width(self):
        net = random_net((3, 2), ("linear",), 0)
        with pytest.raises(ValueError):
            forward(net, np.zeros((4, 5)))


class TestInit:
    def test_glorot_bounds_and_zero_biases(self):
        net = Mlp.init((50, 30, 10), ("tanh", "linear"), np.random.default_rng(0))
        for w, b, (fi, fo) in zip(net.weights, net.biases, [(50, 30), (30, 10)]):
            limit = math.sqrt(6.0 / (fi + fo))
            assert np.max(np.abs(w)) <= limit
            assert np.max(np.abs(w)) > 0.5 * limit  # draws actually span the range
            assert np.array_equal(b, np.zeros(fo))

    def test_same_seed_same_weights(self):
        a = Mlp.init((4, 3), ("tanh",), np.random.default_rng(7))
        b = Mlp.init((4, 3), ("tanh",), np.random.default_rng(7))
        assert np.array_equal(a.weights[0], b.weights[0])

    def test_layer_sizes_and_parameter_count(self):
        net = random_net((441, 200, 20), ("tanh", "linear"), 0)
        assert net.layer_sizes == (441, 200, 20)
        assert net.parameter_count == 441 * 200 + 200 + 200 * 20 + 20

    def test_validation(self):
        with pytest.raises(ValueError):
            Mlp(weights=[np.zeros((3, 2))], biases=[np.zeros(3)], activations=("tanh",))
        with pytest.raises(ValueError):
            Mlp(weights=[np.zeros((3, 2)), np.zeros((4, 1))], biases=[np.zeros(2), np.zeros(1)],
                activations=("tanh", "tanh"))
        with pytest.raises(ValueError):
            Mlp(weights=[np.zeros((3, 2))], biases=[np.zeros(2)], activations=("relu",))
        with pytest.raises(ValueError):
            Mlp(weights=[np.full((3, 2), np.nan)], biases=[np.zeros(2)], activations=("tanh",))


class TestBackward:
    @pytest.mark.parametrize(
        "sizes,acts,seed",
        [
            ((3, 4, 2), ("tanh", "linear"), 0),
            ((5, 6, 6, 4), ("tanh", "tanh", "tanh"), 1),
            ((2, 3), ("linear",), 2),
        ],
    )
    def test_matches_finite_differences(self, sizes, acts, seed):
        net = random_net(sizes, acts, seed)
        rng = np.random.default_rng(seed + 50)
        batch = rng.normal(size=(5, sizes[0]))
        target = rng.normal(size=(5, sizes[-1]))

        def objective():
            return half_sse_loss(forward(net, batch)[-1], target)[0]

        cache = forward(net, batch)
        _, out_grad = half_sse_loss(cache[-1], target)
        w_grads, b_grads, input_grad = backward(net, cache, out_grad)
        for l in range(len(net.weights)):
            assert relative_error(w_grads[l], fd_gradient(objective, net.weights[l])) < 1e-5
            assert relative_error(b_grads[l], fd_gradient(objective, net.biases[l])) < 1e-5
        assert relative_error(input_grad, fd_gradient(objective, batch)) < 1e-5

    def test_sums_over_batch_rows(self):
        # Gradient of a two-row batch equals the sum of the single-row gradients.
        net = random_net((3, 2), ("tanh",), 4)
        rng = np.random.default_rng(5)
        batch = rng.normal(size=(2, 3))
        grad = rng.normal(size=(2, 2))
        full = backward(net, forward(net, batch), grad)
        parts = [backward(net, forward(net, batch[i : i + 1]), grad[i : i + 1]) for i in range(2)]
        assert np.allclose(full[0][0], parts[0][0][0] + parts[1][0][0], rtol=1e-13)
        assert np.allclose(full[1][0], parts[0][1][0] + parts[1][1][0], rtol=1e-13)

    def test_rejects_stale_cache(self):
        net = random_net((3, 4, 2), ("tanh", "linear"), 0)
        other = random_net((3, 5, 2), ("tanh", "linear"), 1)
        batch = np.zeros((2, 3))
        cache = forward(other, batch)
        with pytest.raises(ValueError):
            backward(net, cache, np.zeros((2, 2)))
        with pytest.raises(ValueError):
            backward(net, forward(net, batch), np.zeros((3, 2)))


class TestOptimizers:
    def test_momentum_hand_sequence(self):
        # Powers of two keep every intermediate exactly representable.
        p = [np.array([1.0, -2.0])]
        opt = Momentum(learning_rate=0.25, gamma=0.5)
        opt.step(p, [np.array([1.0, 2.0])])
        # v1 = -0.25*g = (-0.25, -0.5); p1 = (0.75, -2.5)
        assert np.array_equal(p[0], [0.75, -2.5])
        opt.step(p, [np.array([-2.0, 4.0])])
        # v2 = 0.5*v1 - 0.25*g = (0.375, -1.25); p2 = (1.125, -3.75)
        assert np.array_equal(p[0], [1.125, -3.75])

    def test_adam_hand_sequence(self):
        p = [np.array([1.0])]
        g1, g2 = np.array([0.5]), np.array([-1.5])
        opt = Adam(learning_rate=0.1)
        opt.step(p, [g1])
        m = 0.1 * 0.5
        v = 0.001 * 0.25
        expect = 1.0 - 0.1 * (m / 0.1) / (math.sqrt(v / 0.001) + 1e-8)
        assert np.allclose(p[0], [expect], rtol=1e-14)
        opt.step(p, [g2])
        m = 0.9 * m + 0.1 * (-1.5)
        v = 0.999 * v + 0.001 * 2.25
        c1 = 1.0 - 0.9**2
        c2 = 1.0 - 0.999**2
        expect -= 0.1 * (m / c1) / (math.sqrt(v / c2) + 1e-8)
        assert np.allclose(p[0], [expect], rtol=1e-13)

    def test_zero_learning_rate_is_identity(self):
        p = [np.array([3.0, 4.0])]
        before = p[0].copy()
        Momentum(0.0).step(p, [np.array([5.0, -5.0])])
        assert np.array_equal(p[0], before)
        Adam(0.0).step(p, [np.array([5.0, -5.0])])
        assert np.array_equal(p[0], before)

    def test_non_finite_gradients_abort(self):
        p = [np.array([1.0])]
        with pytest.raises(TrainingError):
            Momentum(0.1).step(p, [np.array([np.inf])])
        with pytest.raises(ValueError):
            Momentum(0.1).step(p, [np.zeros(2)])

    def test_make_optimizer_pairs_default_rates(self):
        assert DEFAULT_LEARNING_RATES == {"momentum": 1e-5, "adam": 1e-3}
        assert isinstance(make_optimizer("momentum"), Momentum)
        assert make_optimizer("momentum").learning_rate == 1e-5
        assert isinstance(make_optimizer("adam"), Adam)
        assert make_optimizer("adam").learning_rate == 1e-3
        assert make_optimizer("adam", 0.01).learning_rate == 0.01
        with pytest.raises(ValueError):
            make_optimizer("sgd")

    def test_bad_constructor_arguments(self):
        with pytest.raises(ValueError):
            Momentum(-1.0)
        with pytest.raises(ValueError):
            Momentum(0.1, gamma=1.0)
        with pytest.raises(ValueError):
            Adam(0.1, beta2=1.0)
        with pytest.raises(ValueError):
            Adam(0.1, eps=0.0)


class TestMinibatchStream:
    def test_partitions_each_epoch_when_divisible(self):
        stream = minibatch_stream(9, 3, np.random.default_rng(0))
        epoch = np.concatenate([next(stream) for _ in range(3)])
        assert sorted(epoch) == list(range(9))
        epoch2 = np.concatenate([next(stream) for _ in range(3)])
        assert sorted(epoch2) == list(range(9))
        assert not np.array_equal(epoch, epoch2)  # reshuffled

    def test_drops_short_remainder(self):
        stream = minibatch_stream(10, 3, np.random.default_rng(1))
        batches = [next(stream) for _ in range(6)]
        assert all(len(b) == 3 for b in batches)
        first_epoch = np.concatenate(batches[:3])
        assert len(set(first_epoch)) == 9  # one index per epoch left unused

    def test_deterministic_per_seed(self):
        a = minibatch_stream(8, 4, np.random.default_rng(3))
        b = minibatch_stream(8, 4, np.random.default_rng(3))
        for _ in range(5):
            assert np.array_equal(next(a), next(b))

    def test_rejects_oversized_batch(self):
        with pytest.raises(ValueError):
            next(minibatch_stream(4, 5, np.random.default_rng(0)))


class TestTrain:
    def test_runs_exact_iteration_count_and_reduces_loss(self):
        rng = np.random.default_rng(0)
        inputs = rng.normal(size=(30, 4))
        targets = inputs @ rng.normal(size=(4, 2))
        net = random_net((4, 8, 2), ("tanh", "linear"), 1)
        schedule = TrainSchedule(max_iterations=400, minibatch_size=10, seed=0)
        net, losses = train(net, inputs, targets, half_sse_loss, make_optimizer("adam"), schedule)
        assert losses.shape == (400,)
        assert losses[-1] < 0.2 * losses[0]

    def test_deterministic_under_fixed_seed(self):
        rng = np.random.default_rng(2)
        inputs = rng.normal(size=(12, 3))
        targets = rng.normal(size=(12, 2))

        def run():
            net = random_net((3, 5, 2), ("tanh", "linear"), 9)
            schedule = TrainSchedule(max_iterations=50, minibatch_size=4, seed=5)
            return train(net, inputs, targets, half_sse_loss, make_optimizer("momentum", 1e-3), schedule)

        net_a, loss_a = run()
        net_b, loss_b = run()
        assert np.array_equal(loss_a, loss_b)
        for wa, wb in zip(net_a.weights, net_b.weights):
            assert np.array_equal(wa, wb)

    def test_zero_learning_rate_keeps_parameters(self):
        inputs = np.random.default_rng(0).normal(size=(8, 3))
        net = random_net((3, 2), ("linear",), 0)
        before = [w.copy() for w in net.weights]
        schedule = TrainSchedule(max_iterations=10, minibatch_size=4)
        train(net, inputs, inputs[:, :2], half_sse_loss, Momentum(0.0), schedule)
        for w, b in zip(net.weights, before):
            assert np.array_equal(w, b)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergence_raises_with_iteration(self):
        inputs = np.random.default_rng(0).normal(size=(8, 2))
        net = random_net((2, 2), ("linear",), 0)
        schedule = TrainSchedule(max_iterations=50, minibatch_size=4)
        with pytest.raises(TrainingError, match="iteration|gradient"):
            train(net, inputs, inputs, half_sse_loss, Momentum(1e30), schedule)

    def test_half_sse_loss_values(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        target = np.array([[0.0, 2.0], [3.0, 2.0]])
        loss, grad = half_sse_loss(pred, target)
        assert loss == 0.5 * (1.0 + 4.0) / 2.0
        assert np.array_equal(grad, (pred - target) / 2.0)


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        net = random_net((4, 7, 3), ("tanh", "linear"), 11)
        path = tmp_path / "net.txt"
        save_mlp(net, path)
        back = load_mlp(path)
        assert back.activations == net.activations
        for wa, wb in zip(net.weights, back.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(net.biases, back.biases):
            assert np.array_equal(ba, bb)

    def test_block_stream_holds_multiple_nets(self, tmp_path):
        a = random_net((2, 3), ("tanh",), 0)
        b = random_net((3, 2, 4), ("tanh", "linear"), 1)
        path = tmp_path / "two.txt"
        with open(path, "w") as fh:
            write_mlp_block(fh, a)
            write_mlp_block(fh, b)
        with open(path) as fh:
            lines = iter(fh)
            back_a = read_mlp_block(lines)
            back_b = read_mlp_block(lines)
        assert back_a.layer_sizes == (2, 3)
        assert back_b.layer_sizes == (3, 2, 4)
        assert np.array_equal(back_b.weights[1], b.weights[1])

    def test_truncated_block_raises(self, tmp_path):
        net = random_net((3, 2), ("tanh",), 0)
        path = tmp_path / "trunc.txt"
        save_mlp(net, path)
        text = path.read_text().splitlines()[:-1]
        path.write_text("\n".join(text))
        with pytest.raises(ValueError):
            load_mlp(path)
