import pytest
import torch

from dsalgan import losses as L
from gradcases import loss_cases
from oracles import central_difference, gradient_check, relative_error


@pytest.mark.parametrize("name", sorted(loss_cases()))
def test_loss_gradient_matches_finite_differences(name):
    fn, tensors = loss_cases()[name]
    assert gradient_check(fn, tensors) < 1e-4


def test_total_gradient_is_sum_of_term_gradients():
    gen = torch.Generator().manual_seed(5)
    a = torch.rand(2, 3, 4, 4, generator=gen, dtype=torch.float64)
    b = torch.rand(2, 3, 4, 4, generator=gen, dtype=torch.float64)
    s = 0.1 + 0.8 * torch.rand(4, generator=gen, dtype=torch.float64)
    w = L.LossWeights(w1=0.25)
    total = lambda: L.total_denoise_loss(L.denoise_content_loss(a, b), L.adversarial_gen_loss(s), w)
    content = central_difference(lambda: L.denoise_content_loss(a, b), [a, b, s])
    adv = central_difference(lambda: L.adversarial_gen_loss(s), [a, b, s])
    combined = [c + w.w1 * d for c, d in zip(content, adv)]
    assert relative_error(central_difference(total, [a, b, s]), combined) < 1e-6


def test_clamped_scores_have_zero_gradient():
    s = torch.tensor([0.0, 1.0], dtype=torch.float64, requires_grad=True)
    (g,) = torch.autograd.grad(L.adversarial_gen_loss(s), [s])
    assert torch.all(g == 0)
