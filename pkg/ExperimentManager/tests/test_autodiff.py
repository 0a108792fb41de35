import numpy as np
from django.test import SimpleTestCase

from ExperimentManager import autodiff as ad
from ExperimentManager.exceptions import ContractError, DimensionError, DomainError, TapeError


def scalar(func, *arrays):
    """Value of a graph-built scalar for plain arrays, on a throwaway tape."""
    tape = ad.Tape()
    return func(*[tape.constant(a) for a in arrays]).item()


def analytic_grad(func, point, *others):
    tape = ad.Tape()
    x = tape.leaf(point, requires_grad=True)
    loss = func(x, *[tape.constant(o) for o in others])
    tape.backward(loss)
    return tape.grad(x)


class MatmulTests(SimpleTestCase):
    def test_identity(self):
        tape = ad.Tape()
        m = np.array([[1.5, -2.0], [0.25, 4.0]])
        out = ad.matmul(tape.constant(np.eye(2)), tape.constant(m))
        np.testing.assert_array_equal(out.value, m)

    def test_hand_example(self):
        tape = ad.Tape()
        out = tape.constant([[1, 2], [3, 4]]) @ tape.constant([[1], [1]])
        np.testing.assert_array_equal(out.value, [[3], [7]])

    def test_shape_mismatch(self):
        tape = ad.Tape()
        with self.assertRaises(DimensionError):
            ad.matmul(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 3))))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        func = lambda x, y: ad.total(ad.matmul(x, y))
        numeric = ad.numerical_gradient(lambda p: scalar(func, p, b), a)
        np.testing.assert_allclose(analytic_grad(func, a, b), numeric, rtol=1e-6, atol=1e-9)


class ElementwiseTests(SimpleTestCase):
    def test_exp_of_zeros(self):
        tape = ad.Tape()
        np.testing.assert_array_equal(ad.exp(tape.constant(np.zeros((2, 3)))).value, np.ones((2, 3)))

    def test_log_inverts_exp(self):
        tape = ad.Tape()
        m = np.random.default_rng(1).uniform(-5, 5, size=(4, 4))
        out = ad.elementwise('log', ad.elementwise('exp', tape.constant(m)))
        self.assertLess(np.max(np.abs(out.value - m)), 1e-12)

    def test_log_rejects_non_positive(self):
        tape = ad.Tape()
        with self.assertRaises(DomainError):
            ad.log(tape.constant([[1.0, 0.0]]))

    def test_unknown_op(self):
        tape = ad.Tape()
        with self.assertRaises(ContractError):
            ad.elementwise('tanh', tape.constant([[1.0]]))

    def test_mean_exp_gradient(self):
        m = np.random.default_rng(2).normal(size=(3, 4))
        func = lambda x: ad.mean(ad.exp(x))
        numeric = ad.numerical_gradient(lambda p: scalar(func, p), m)
        np.testing.assert_allclose(analytic_grad(func, m), numeric, rtol=1e-6, atol=1e-9)

    def test_bias_row_broadcast(self):
        tape = ad.Tape()
        out = tape.constant(np.zeros((3, 2))) + tape.constant([[1.0, 2.0]])
        np.testing.assert_array_equal(out.value, [[1, 2]] * 3)

    def test_elu_values(self):
        tape = ad.Tape()
        out = ad.elu(tape.constant([[1.0, 0.0, -1.0]]))
        np.testing.assert_allclose(out.value, [[1.0, 0.0, np.exp(-1.0) - 1.0]], rtol=1e-12)
        self.assertAlmostEqual(out.value[0, 2], -0.63212, places=5)

    def test_sqrt_adjoint_is_zero_at_zero(self):
        tape = ad.Tape()
        x = tape.leaf([[0.0, 4.0]], requires_grad=True)
        tape.backward(ad.total(ad.sqrt(x)))
        np.testing.assert_allclose(tape.grad(x), [[0.0, 0.25]])


class ReduceTests(SimpleTestCase):
    def test_mean_hand_example(self):
        tape = ad.Tape()
        self.assertEqual(ad.reduce('mean', tape.constant([[1.0, 3.0]])).item(), 2.0)

    def test_sum_of_zeros(self):
        tape = ad.Tape()
        self.assertEqual(ad.reduce('sum', tape.constant(np.zeros((3, 3)))).item(), 0.0)

    def test_axis_keeps_two_dimensions(self):
        tape = ad.Tape()
        x = tape.constant(np.arange(6.0).reshape(2, 3))
        self.assertEqual(ad.total(x, axis=1).shape, (2, 1))
        self.assertEqual(ad.mean(x, axis=0).shape, (1, 3))

    def test_mean_gradient_is_uniform(self):
        grad = analytic_grad(ad.mean, np.random.default_rng(3).normal(size=(4, 5)))
        np.testing.assert_allclose(grad, np.full((4, 5), 1.0 / 20))

    def test_empty_axis(self):
        tape = ad.Tape()
        with self.assertRaises(DomainError):
            ad.mean(tape.constant(np.zeros((0, 3))), axis=0)


class ConcatTests(SimpleTestCase):
    def test_shape_and_split(self):
        tape = ad.Tape()
        a, b = np.ones((4, 2)), np.zeros((4, 3))
        joined = ad.concat_cols(tape.constant(a), tape.constant(b))
        self.assertEqual(joined.shape, (4, 5))
        left, right = ad.split_cols(joined, 2)
        np.testing.assert_array_equal(left.value, a)
        np.testing.assert_array_equal(right.value, b)

    def test_row_mismatch(self):
        tape = ad.Tape()
        with self.assertRaises(DimensionError):
            ad.concat_cols(tape.constant(np.ones((2, 1))), tape.constant(np.ones((3, 1))))

    def test_gradient_flows_into_matching_block(self):
        tape = ad.Tape()
        a = tape.leaf(np.ones((2, 2)), requires_grad=True)
        b = tape.leaf(np.ones((2, 3)), requires_grad=True)
        left, _ = ad.split_cols(ad.concat_cols(a, b), 2)
        tape.backward(ad.total(ad.scale(left, 3.0)))
        np.testing.assert_array_equal(tape.grad(a), np.full((2, 2), 3.0))
        np.testing.assert_array_equal(tape.grad(b), np.zeros((2, 3)))


class TapeTests(SimpleTestCase):
    def test_second_backward_raises(self):
        tape = ad.Tape()
        x = tape.leaf([[2.0]], requires_grad=True)
        loss = ad.square(x)
        tape.backward(loss)
        with self.assertRaises(TapeError):
            tape.backward(loss)

    def test_backward_needs_scalar(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones((2, 2)), requires_grad=True)
        with self.assertRaises(DimensionError):
            tape.backward(ad.square(x))

    def test_mixing_tapes(self):
        with self.assertRaises(ContractError):
            ad.add(ad.Tape().constant([[1.0]]), ad.Tape().constant([[1.0]]))

    def test_node_ids_are_monotonic(self):
        tape = ad.Tape()
        x = tape.leaf([[1.0]], requires_grad=True)
        y = ad.exp(x)
        z = ad.square(y)
        self.assertLess(x.node_id, y.node_id)
        self.assertLess(y.node_id, z.node_id)

    def test_constants_get_no_gradient(self):
        tape = ad.Tape()
        x = tape.leaf([[1.0, 2.0]], requires_grad=True)
        c = tape.constant([[3.0, 4.0]])
        tape.backward(ad.total(x * c))
        np.testing.assert_array_equal(tape.grad(x), [[3.0, 4.0]])
        np.testing.assert_array_equal(tape.grad(c), [[0.0, 0.0]])

    def test_as_matrix_rejects_nan(self):
        with self.assertRaises(DomainError):
            ad.as_matrix([[1.0, np.nan]])


class RandomCompositeGradientTests(SimpleTestCase):
    """Reverse-mode gradients of a loss touching every op vs central differences."""

    @staticmethod
    def composite(a, b):
        tape = a.tape
        ones = tape.constant(np.ones(b.shape))
        mixed = ad.add(ad.mul(a, b), ad.scale(ad.elu(a), 0.5))
        smooth = ad.log(ad.add(ad.square(b), ad.add(ones, ad.exp(ad.negate(ad.square(a))))))
        joined = ad.concat_cols(mixed, smooth)
        root = ad.sqrt(ad.add(ad.square(joined), tape.constant(np.ones(joined.shape))))
        projected = ad.matmul(ad.transpose(a), ad.sub(root, joined))
        picked = ad.take_rows(a, [0, 2, 0])
        return ad.add(ad.mean(projected), ad.total(ad.elu_grad(picked)))

    def test_random_trials(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            a = rng.uniform(-2, 2, size=(3, 2))
            b = rng.uniform(-2, 2, size=(3, 2))
            numeric = ad.numerical_gradient(lambda p: scalar(self.composite, p, b), a)
            np.testing.assert_allclose(analytic_grad(self.composite, a, b), numeric, rtol=1e-5, atol=1e-6)


class MlpInputGradientTests(SimpleTestCase):
    def bind(self, tape, layers, trainable=False):
        return [(tape.leaf(w, requires_grad=trainable), tape.leaf(b, requires_grad=trainable)) for w, b in layers]

    def test_linear_critic_gradient_is_weight(self):
        tape = ad.Tape()
        w = np.array([[0.5], [-1.0], [2.0]])
        layers = self.bind(tape, [(w, np.zeros((1, 1)))])
        grad = ad.mlp_input_gradient(layers, tape.constant(np.random.default_rng(5).normal(size=(4, 3))))
        np.testing.assert_array_equal(grad.value, np.repeat(w.T, 4, axis=0))

    def test_hidden_layer_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        raw = [(rng.normal(size=(3, 5)), rng.normal(size=(1, 5))), (rng.normal(size=(5, 1)), rng.normal(size=(1, 1)))]
        x = rng.normal(size=(4, 3))
        tape = ad.Tape()
        grad = ad.mlp_input_gradient(self.bind(tape, raw), tape.constant(x)).value

        def critic_sum(point):
            hidden = point @ raw[0][0] + raw[0][1]
            hidden = np.where(hidden > 0, hidden, np.exp(np.minimum(hidden, 0)) - 1)
            return float((hidden @ raw[1][0] + raw[1][1]).sum())

        # rows are independent, so the gradient of the summed output is the per-row input gradient
        np.testing.assert_allclose(grad, ad.numerical_gradient(critic_sum, x), rtol=1e-5, atol=1e-8)

    def test_penalty_gradient_closed_form(self):
        w = np.array([[0.3], [1.2], [-0.4]])
        tape = ad.Tape()
        layers = self.bind(tape, [(w, np.zeros((1, 1)))], trainable=True)
        grad = ad.mlp_input_gradient(layers, tape.constant(np.ones((5, 3))))
        norms = ad.sqrt(ad.total(ad.square(grad), axis=1))
        loss = ad.mean(ad.square(ad.sub(norms, tape.constant(np.ones((5, 1))))))
        tape.backward(loss)
        norm = np.linalg.norm(w)
        np.testing.assert_allclose(tape.grad(layers[0][0]), 2 * (norm - 1) * w / norm, rtol=1e-10)

    def test_requires_scalar_head(self):
        tape = ad.Tape()
        layers = self.bind(tape, [(np.ones((2, 2)), np.zeros((1, 2)))])
        with self.assertRaises(ContractError):
            ad.mlp_input_gradient(layers, tape.constant(np.ones((1, 2))))
