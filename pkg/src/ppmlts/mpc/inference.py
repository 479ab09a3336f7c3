"""Encrypted forward passes, feature aggregation and a single encrypted SGD step.

Model parameters and inputs are encoded, secret-shared among the computing
parties, and every layer is evaluated on shares. Only the logits are opened,
and only to the output party. Softmax is never evaluated on shares.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import SampleIdMismatch, UnsupportedLayer
from ..nn.layers import Conv1D, Dense, Dropout, Flatten, GlobalAvgPool1D, MaxPool1D, ReLU, col2im, im2col
from ..nn.model import Model
from .dealer import TrustedDealer
from .fixed_point import FixedPointCodec
from .party import Party
from .protocols import run_parties
from .ring import U64, as_ring
from .sharing import Share, share
from .transport import InProcessNetwork, Network

SHARE_DOMAIN = 0x5A  # rng domain for input/parameter sharing


@dataclass(frozen=True)
class _Op:
    kind: str
    layer: object


def plan_layers(model: Model, commute_pool: bool = False) -> list[_Op]:
    """Map a plaintext model onto share-evaluable operations.

    With ``commute_pool`` a ReLU directly followed by max-pooling is evaluated
    as pool-then-ReLU; both orders give the same values exactly, but the
    second compares far fewer elements.
    """
    ops = []
    for layer in model.layers:
        if isinstance(layer, Conv1D):
            ops.append(_Op("conv", layer))
        elif isinstance(layer, Dense):
            ops.append(_Op("dense", layer))
        elif isinstance(layer, ReLU):
            ops.append(_Op("relu", layer))
        elif isinstance(layer, MaxPool1D):
            ops.append(_Op("maxpool", layer))
        elif isinstance(layer, Flatten):
            ops.append(_Op("flatten", layer))
        elif isinstance(layer, GlobalAvgPool1D):
            ops.append(_Op("gap", layer))
        elif isinstance(layer, Dropout):
            ops.append(_Op("identity", layer))
        else:
            raise UnsupportedLayer(f"{layer.kind} layers have no encrypted implementation")
    if commute_pool:
        i = 0
        while i < len(ops) - 1:
            if ops[i].kind == "relu" and ops[i + 1].kind == "maxpool":
                ops[i], ops[i + 1] = ops[i + 1], ops[i]
                i += 1
            i += 1
    return ops


def share_tensor(x: np.ndarray, codec: FixedPointCodec, n_parties: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [as_ring(s.value) for s in share(codec.encode(np.asarray(x, dtype=np.float64)), n_parties, rng)]


def share_parameters(model: Model, codec: FixedPointCodec, n_parties: int, rng: np.random.Generator) -> list[dict]:
    """Per-party dicts ``name -> share`` of every model parameter."""
    out = [dict() for _ in range(n_parties)]
    for name, p in model.parameters.items():
        for pid, s in enumerate(share_tensor(p, codec, n_parties, rng)):
            out[pid][name] = s
    return out


# -- party-side layer evaluation --------------------------------------------------


def _forward(party: Party, ops: list[_Op], params: dict, x: np.ndarray, cache: list | None = None) -> np.ndarray:
    for op in ops:
        layer = op.layer
        key = lambda pname: f"{layer.name}.{pname}"
        if op.kind == "conv":
            b, c, length = x.shape
            cols = im2col(x, layer.kernel, layer.stride, layer.pad)
            lout = cols.shape[1]
            w2 = params[key("weight")].reshape(layer.out_channels, -1).T
            y = party.matmul_fixed(cols.reshape(b * lout, -1), w2) + params[key("bias")]
            if cache is not None:
                cache.append((cols, (c, length)))
            x = np.ascontiguousarray(y.reshape(b, lout, -1).transpose(0, 2, 1))
        elif op.kind == "dense":
            if cache is not None:
                cache.append(x)
            x = party.matmul_fixed(x, params[key("weight")]) + params[key("bias")]
        elif op.kind == "relu":
            if cache is not None:
                x, mask = party.relu(x, return_mask=True)
                cache.append(mask)
            else:
                x = party.relu(x)
        elif op.kind == "maxpool":
            if cache is not None:
                in_shape = x.shape
                x, mask = party.maxpool(x, layer.kernel, layer.stride, return_mask=True)
                cache.append((mask, in_shape))
            else:
                x = party.maxpool(x, layer.kernel, layer.stride)
        elif op.kind == "flatten":
            if cache is not None:
                cache.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif op.kind == "gap":
            if cache is not None:
                cache.append(x.shape)
            x = party.mul_public(x.sum(axis=2), 1.0 / x.shape[2])
        elif cache is not None:
            cache.append(None)
    return x


def _backward(party: Party, ops: list[_Op], params: dict, cache: list, g: np.ndarray) -> dict:
    grads = {}
    for op, saved in zip(reversed(ops), reversed(cache)):
        layer = op.layer
        key = lambda pname: f"{layer.name}.{pname}"
        if op.kind == "dense":
            x = saved
            grads[key("weight")] = party.matmul_fixed(np.ascontiguousarray(x.T), g)
            grads[key("bias")] = g.sum(axis=0)
            g = party.matmul_fixed(g, np.ascontiguousarray(params[key("weight")].T))
        elif op.kind == "conv":
            cols, (c, length) = saved
            b, lout, ck = cols.shape
            g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b * lout, -1)
            cols2 = cols.reshape(b * lout, ck)
            gw2 = party.matmul_fixed(np.ascontiguousarray(cols2.T), g2)
            grads[key("weight")] = np.ascontiguousarray(gw2.T).reshape(params[key("weight")].shape)
            grads[key("bias")] = g2.sum(axis=0)
            w2 = params[key("weight")].reshape(layer.out_channels, -1)
            gcols = party.matmul_fixed(g2, w2)
            g = col2im(gcols.reshape(b, lout, ck), c, length, layer.kernel, layer.stride, layer.pad)
        elif op.kind == "relu":
            g = party.mul(g, saved)
        elif op.kind == "maxpool":
            mask, in_shape = saved
            routed = party.mul(np.repeat(g[..., None], layer.kernel, axis=-1), mask)
            gx = np.zeros(in_shape, dtype=U64)
            lout = g.shape[-1]
            span = layer.stride * (lout - 1) + 1
            for j in range(layer.kernel):
                gx[..., j : j + span : layer.stride] += routed[..., j]
            g = gx
        elif op.kind == "flatten":
            g = g.reshape(saved)
        elif op.kind == "gap":
            b, c, length = saved
            g = np.repeat(party.mul_public(g, 1.0 / length)[:, :, None], length, axis=2)
    return grads


# -- public API ---------------------------------------------------------------------


def _environment(network, dealer, n_parties, seed):
    network = network or InProcessNetwork(n_parties)
    dealer = dealer or TrustedDealer(seed, network.n_parties)
    return network, dealer


def encrypted_inference(
    model: Model,
    inputs: np.ndarray | Sequence[Share],
    codec: FixedPointCodec | None = None,
    network: Network | None = None,
    dealer: TrustedDealer | None = None,
    seed: int = 0,
    batch_size: int = 128,
    output_party: int = 0,
    n_parties: int = 2,
) -> np.ndarray:
    """Logits of ``model`` on ``inputs`` computed entirely on secret shares.

    ``inputs`` is either a plaintext (B, C, L) array, which is encoded and
    shared here, or a complete list of input shares (e.g. from
    :func:`feature_aggregate`). Returns the decoded logits seen by
    ``output_party``.
    """
    codec = codec or FixedPointCodec()
    network, dealer = _environment(network, dealer, n_parties, seed)
    n = network.n_parties
    rng = np.random.default_rng([seed, SHARE_DOMAIN])
    ops = plan_layers(model, commute_pool=True)
    params = share_parameters(model, codec, n, rng)
    if isinstance(inputs, np.ndarray):
        x_shares = share_tensor(inputs, codec, n, rng)
    else:
        x_shares = [as_ring(s.value) for s in sorted(inputs, key=lambda s: s.party_id)]
    total = x_shares[0].shape[0]

    def body(party: Party):
        outs = []
        for start in range(0, total, batch_size):
            x = x_shares[party.pid][start : start + batch_size]
            logits = _forward(party, ops, params[party.pid], x)
            outs.append(party.reveal_to(logits, output_party))
        return None if outs and outs[0] is None else outs

    opened = run_parties(network, dealer, body, codec)[output_party]
    if not opened:
        return np.zeros((0, model.spec.num_classes))
    return codec.decode(np.concatenate(opened))


@dataclass
class FeatureContribution:
    """Channels of a common sample set held by one data owner."""

    owner: int
    sample_ids: np.ndarray
    samples: np.ndarray  # (count, channels_k, length), plaintext at the owner


def feature_aggregate(
    parts: Sequence[FeatureContribution],
    codec: FixedPointCodec | None = None,
    n_parties: int = 2,
    seed: int = 0,
) -> list[Share]:
    """Join owners' channel subsets into one shared (count, sum C_k, L) tensor.

    Each owner aligns its rows to the first owner's sample-id order, encodes
    and input-shares its channels; the computing parties then concatenate
    their shares along the channel axis. Nothing is revealed.
    """
    if not parts:
        raise ValueError("no feature contributions")
    codec = codec or FixedPointCodec()
    ref_ids = np.asarray(parts[0].sample_ids)
    if len(np.unique(ref_ids)) != len(ref_ids):
        raise SampleIdMismatch("sample ids must be unique")
    per_party: list[list[np.ndarray]] = [[] for _ in range(n_parties)]
    for part in parts:
        ids = np.asarray(part.sample_ids)
        if len(ids) != len(ref_ids) or set(ids.tolist()) != set(ref_ids.tolist()):
            raise SampleIdMismatch(f"owner {part.owner} holds a different sample set")
        if part.samples.shape[0] != len(ids):
            raise SampleIdMismatch(f"owner {part.owner}: {len(ids)} ids for {part.samples.shape[0]} rows")
        order = {v: i for i, v in enumerate(ids.tolist())}
        aligned = part.samples[[order[v] for v in ref_ids.tolist()]]
        rng = np.random.default_rng([seed, SHARE_DOMAIN, part.owner])
        for pid, s in enumerate(share_tensor(aligned, codec, n_parties, rng)):
            per_party[pid].append(s)
    return [Share(pid, np.concatenate(chunks, axis=1), "features", n_parties) for pid, chunks in enumerate(per_party)]


def encrypted_train_step(
    model: Model,
    batch: np.ndarray,
    labels: np.ndarray,
    learning_rate: float,
    codec: FixedPointCodec | None = None,
    network: Network | None = None,
    dealer: TrustedDealer | None = None,
    seed: int = 0,
    n_parties: int = 2,
) -> Model:
    """One SGD step evaluated on shares; returns the reconstructed model.

    Softmax is not available on shares, so the output gradient is the
    squared-error surrogate ``(logits - onehot) / B``. Dropout is inactive.
    """
    codec = codec or FixedPointCodec()
    network, dealer = _environment(network, dealer, n_parties, seed)
    n = network.n_parties
    rng = np.random.default_rng([seed, SHARE_DOMAIN])
    ops = plan_layers(model)
    params = share_parameters(model, codec, n, rng)
    x_shares = share_tensor(batch, codec, n, rng)
    onehot = np.eye(model.spec.num_classes)[np.asarray(labels)]
    y_shares = share_tensor(onehot, codec, n, rng)
    b = len(batch)

    def body(party: Party):
        mine = params[party.pid]
        cache: list = []
        logits = _forward(party, ops, mine, x_shares[party.pid], cache)
        g = party.mul_public(logits - y_shares[party.pid], 1.0 / b)
        grads = _backward(party, ops, mine, cache, g)
        return {k: v - party.mul_public(grads[k], learning_rate) for k, v in mine.items()}

    new_shares = run_parties(network, dealer, body, codec)
    out = model.copy()
    state = {}
    for name in model.parameters:
        total = new_shares[0][name].copy()
        for s in new_shares[1:]:
            total += s[name]
        state[name] = codec.decode(total)
    out.load_state_dict(state)
    return out
