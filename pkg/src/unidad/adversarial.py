"""Multi-head discriminator on the fake teacher's hidden features, and GAN loss families."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import Denoiser
from .nn import MlpNetwork, forward

FAMILIES = ("hinge", "bce", "lsgan", "wgan")


class MultiHeadDiscriminator:
    """One head per tapped hidden layer of the fake teacher.

    Multi-head: a linear map to one logit on every hidden layer.  Single-head:
    one two-layer head on the last hidden layer only.
    """

    def __init__(self, heads: list[MlpNetwork], taps: list[int]):
        if len(heads) != len(taps):
            raise ValueError("need exactly one head per tap")
        self.heads = heads
        self.taps = list(taps)

    @classmethod
    def init(cls, fake: Denoiser, rng: np.random.Generator, multi_head: bool = True,
             zero: bool = False) -> MultiHeadDiscriminator:
        widths = fake.network.hidden_widths
        if multi_head:
            taps = list(range(len(widths)))
            heads = [MlpNetwork.init([widths[b], 1], "identity", rng) for b in taps]
        else:
            taps = [len(widths) - 1]
            w = widths[-1]
            heads = [MlpNetwork.init([w, max(w // 2, 1), 1], "relu", rng)]
        disc = cls(heads, taps)
        if zero:
            for p in disc.parameters():
                p.data = np.zeros_like(p.data)
        return disc

    @property
    def head_count(self) -> int:
        return len(self.heads)

    def parameters(self) -> list[Tensor]:
        return [p for h in self.heads for p in h.parameters()]

    def zero_grad(self) -> None:
        for h in self.heads:
            h.zero_grad()

    def copy(self) -> MultiHeadDiscriminator:
        return MultiHeadDiscriminator([h.copy() for h in self.heads], list(self.taps))


def extract_logits(disc: MultiHeadDiscriminator, fake: Denoiser, x_t, t,
                   record: bool = True, param_grad: bool = True) -> list[Tensor]:
    """Per-head logits, each of shape (batch, 1).

    ``param_grad=False`` freezes the fake-teacher body and the heads so that only
    ``x_t`` (and whatever produced it) receives gradient.
    """
    n_hidden = len(fake.network.hidden_widths)
    for b in disc.taps:
        if not 0 <= b < n_hidden:
            raise IndexError(f"tap {b} outside the {n_hidden} hidden layers of the fake teacher")
    _, hidden = fake.predict(x_t, t, record=record, param_grad=param_grad, taps=True)
    return [forward(head, hidden[b], record=record, param_grad=param_grad)
            for head, b in zip(disc.heads, disc.taps)]


def _check_family(family: str) -> None:
    if family not in FAMILIES:
        raise ValueError(f"unknown GAN loss family {family!r}; expected one of {FAMILIES}")


def _square(x: Tensor) -> Tensor:
    return ad.mul(x, x)


def gan_d_loss(family: str, real_logits: list[Tensor], fake_logits: list[Tensor]) -> Tensor:
    """Discriminator loss summed over heads."""
    _check_family(family)
    if len(real_logits) != len(fake_logits):
        raise ValueError(f"{len(real_logits)} real heads vs {len(fake_logits)} fake heads")
    terms = []
    for r, f in zip(real_logits, fake_logits):
        if family == "hinge":
            terms += [ad.mean(ad.relu(ad.sub(1.0, r))), ad.mean(ad.relu(ad.add(1.0, f)))]
        elif family == "bce":
            terms += [ad.mean(ad.softplus(ad.neg(r))), ad.mean(ad.softplus(f))]
        elif family == "lsgan":
            terms += [ad.mean(_square(ad.sub(r, 1.0))), ad.mean(_square(f))]
        else:
            terms += [ad.mean(f), ad.neg(ad.mean(r))]
    return _total(terms)


def gan_g_loss(family: str, fake_logits: list[Tensor]) -> Tensor:
    """Generator loss summed over heads; bce is the non-saturating form."""
    _check_family(family)
    terms = []
    for f in fake_logits:
        if family in ("hinge", "wgan"):
            terms.append(ad.neg(ad.mean(f)))
        elif family == "bce":
            terms.append(ad.mean(ad.softplus(ad.neg(f))))
        else:
            terms.append(ad.mean(_square(ad.sub(f, 1.0))))
    return _total(terms)


def _total(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out
