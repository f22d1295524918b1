"""Relation bridges between cause and effect latents.

A relation maps the concatenation of windowed cause latents (window_n
steps per cause, window_m fixed at 1 on the effect side) to the effect
node's latent. Training interleaves three moves per epoch:

  1. end-to-end: cause encoders + relation + effect decoder fit the
     decoded effect observation, with a Gaussian KLD penalty pulling
     the predicted latent batch toward the true latent batch,
  2. the effect autoencoder fine-tunes on its own reconstruction,
  3. each cause autoencoder fine-tunes on its own reconstruction.

Steps 2 and 3 carry a snapshot-and-revert guard so a batch update that
would worsen that batch's self-reconstruction is rolled back; reverts
are counted, not hidden. Stacking registers trained relations at their
effect node; routing feeds data through chains of them.
"""

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import substream
from .dataio import kfold_split
from .errors import DataError, RegistryError, RoutingError, TrainingError
from .metrics import MetricRow, nse
from .nn import Adam, DenseLayer, LossReport, bce_grad, bce_loss, mse_grad, mse_loss
from .noderepr import (decode_node, featurize_series, scaled_attrs_from_features)
from .stats import gaussian_kld, gaussian_stats, kld_batch_grad


class RelationModel:
    """Dense stack from concatenated cause windows to the effect latent."""

    def __init__(self, causes, effect, window_n, latent_dim, hidden, rng=None,
                 in_dim=None):
        self.causes = tuple(causes)
        self.effect = effect
        self.window_n = int(window_n)
        self.latent_dim = int(latent_dim)
        self.hidden = int(hidden)
        self.in_dim = in_dim if in_dim is not None else \
            len(self.causes) * self.window_n * self.latent_dim
        label = f"rel[{'+'.join(self.causes)}->{effect}]"
        self.l1 = DenseLayer(self.in_dim, hidden, "tanh", rng, name=f"{label}.l1")
        self.l2 = DenseLayer(hidden, latent_dim, "identity", rng, name=f"{label}.l2")

    @property
    def relation_id(self):
        return (self.causes, self.effect)

    def forward(self, x, cache=True):
        return self.l2.forward(self.l1.forward(x, cache=cache), cache=cache)

    def backward(self, grad_out):
        return self.l1.backward(self.l2.backward(grad_out))

    def zero_grads(self):
        self.l1.zero_grads()
        self.l2.zero_grads()

    def parameters(self):
        return self.l1.parameters() + self.l2.parameters()

    def gradients(self):
        return self.l1.gradients() + self.l2.gradients()


@dataclass
class MicroCausalModel:
    causes: tuple
    cause_models: dict
    relation: RelationModel
    effect_model: object
    window_n: int
    metrics: MetricRow = None
    training_log: dict = None

    @property
    def relation_id(self):
        return (self.causes, self.relation.effect)


def _window_offsets(ts, n):
    return (np.asarray(ts)[:, None] - n + np.arange(n)[None, :]).ravel()


def _encode_windows(model, feats, ts, n, cache):
    lat = model.encode(feats[_window_offsets(ts, n)], cache=cache)
    return lat.reshape(len(ts), n * model.latent_dim)


def _self_loss(model, feats, mask_t, lambda_mask):
    latent = model.encode(feats, cache=False)
    feat_hat, mask_prob = model.decode_latent(latent, cache=False)
    return mse_loss(feat_hat, feats) + lambda_mask * bce_loss(mask_prob, mask_t)


def _guarded_step(adam, grads, loss_pre, recompute):
    """Adam update that never leaves the batch worse than it found it."""
    snap = adam.snapshot()
    adam.step(grads)
    loss_post = recompute()
    if loss_post > loss_pre:
        adam.restore(snap)
        return loss_pre, True
    return loss_post, False


def train_micro_causal(causes, effect, dataset, config, models):
    """Fit one (cause set -> effect) micro-causal model.

    models maps node name to a trained NodeAutoencoder; the entries are
    deep-copied so the registry's models stay untouched. Metrics come
    from the last contiguous fold, which training never fits.
    """
    causes = list(causes)
    if len(set(causes)) != len(causes):
        raise TrainingError("duplicate cause node in cause set")
    if effect in causes:
        raise TrainingError("effect node cannot be its own cause")
    for name in causes + [effect]:
        if name not in dataset:
            raise TrainingError(f"node {name!r} missing from dataset")
        if name not in models:
            raise TrainingError(f"node {name!r} has no initialized autoencoder")
    n = config.window_n
    eff_series = dataset[effect]
    T = eff_series.steps
    plan = kfold_split(T, config.folds)
    hold_lo, hold_hi = plan.bounds[-1]
    all_ts = np.arange(n, T)
    train_ts = all_ts[all_ts < hold_lo]
    test_ts = all_ts[(all_ts >= hold_lo) & (all_ts < hold_hi)]
    if train_ts.size < 50:
        raise TrainingError(
            f"insufficient pairs: {train_ts.size} training windows (< 50)")

    cause_models = {c: copy.deepcopy(models[c]) for c in causes}
    effect_model = copy.deepcopy(models[effect])
    feats = {name: featurize_series(dataset[name]) for name in causes + [effect]}
    eff_feats = feats[effect]
    eff_mask = eff_series.mask.astype(float)

    rng = substream(config.seed, "relation-init", ",".join(causes), effect)
    relation = RelationModel(causes, effect, n, config.latent_dim,
                             config.hidden_width, rng)

    step1_named = []
    for c in causes:
        for layer in cause_models[c].encoder_layers():
            step1_named.extend(layer.parameters())
    step1_named.extend(relation.parameters())
    for layer in effect_model.decoder_layers():
        step1_named.extend(layer.parameters())
    adam1 = Adam(step1_named, lr=config.lr)
    adam2 = Adam(effect_model.parameters(), lr=config.lr)
    adam3 = {c: Adam(cause_models[c].parameters(), lr=config.lr) for c in causes}

    log = {"epoch_loss": [], "step2": [], "step3": [],
           "step2_reverts": 0, "step3_reverts": 0}
    order_rng = substream(config.seed, "relation-batches", ",".join(causes), effect)
    lam_m, lam_k = config.lambda_mask, config.lambda_kld

    for epoch in range(config.epochs):
        perm = order_rng.permutation(train_ts)
        epoch_total = []
        for start in range(0, perm.size, config.batch_size):
            ts = perm[start:start + config.batch_size]
            # step 1: cause encoders + relation + effect decoder
            for c in causes:
                cause_models[c].zero_grads()
            relation.zero_grads()
            effect_model.zero_grads()
            xs = [_encode_windows(cause_models[c], feats[c], ts, n, cache=True)
                  for c in causes]
            x = np.concatenate(xs, axis=1)
            v_hat = relation.forward(x, cache=True)
            v_true = effect_model.encode(eff_feats[ts], cache=False)
            feat_hat, mask_prob = effect_model.decode_latent(v_hat, cache=True)
            value_loss = mse_loss(feat_hat, eff_feats[ts])
            mask_loss = bce_loss(mask_prob, eff_mask[ts])
            grad_vhat = effect_model.backward_decode(
                mse_grad(feat_hat, eff_feats[ts]),
                lam_m * bce_grad(mask_prob, eff_mask[ts]))
            kld_loss = 0.0
            if lam_k > 0.0 and ts.size >= 2:
                kld_loss, kld_g = kld_batch_grad(v_hat, gaussian_stats(v_true))
                grad_vhat = grad_vhat + lam_k * kld_g
            report = LossReport.build(value_loss, mask_loss, kld_loss, lam_m, lam_k)
            if not np.isfinite(report.total):
                raise TrainingError(
                    f"relation {causes}->{effect}: loss diverged")
            grad_x = relation.backward(grad_vhat)
            pos = 0
            for c in causes:
                span = n * config.latent_dim
                g = grad_x[:, pos:pos + span].reshape(ts.size * n, config.latent_dim)
                cause_models[c].backward_encode(g)
                pos += span
            grads1 = []
            for c in causes:
                for layer in cause_models[c].encoder_layers():
                    grads1.extend(layer.gradients())
            grads1.extend(relation.gradients())
            for layer in effect_model.decoder_layers():
                grads1.extend(layer.gradients())
            adam1.step(grads1)
            epoch_total.append(report.total)

            # step 2: effect self-reconstruction, never made worse
            rep2, grads2 = effect_model.loss_and_grads(eff_feats[ts], eff_mask[ts], lam_m)
            post, reverted = _guarded_step(
                adam2, grads2, rep2.total,
                lambda: _self_loss(effect_model, eff_feats[ts], eff_mask[ts], lam_m))
            log["step2"].append((rep2.total, post))
            log["step2_reverts"] += int(reverted)

            # step 3: cause self-reconstruction, same guard
            for c in causes:
                cm = cause_models[c]
                c_mask = dataset[c].mask.astype(float)
                rep3, grads3 = cm.loss_and_grads(feats[c][ts], c_mask[ts], lam_m)
                post, reverted = _guarded_step(
                    adam3[c], grads3, rep3.total,
                    lambda: _self_loss(cm, feats[c][ts], c_mask[ts], lam_m))
                log["step3"].append((rep3.total, post))
                log["step3_reverts"] += int(reverted)
        log["epoch_loss"].append(float(np.mean(epoch_total)))

    model = MicroCausalModel(causes=tuple(causes), cause_models=cause_models,
                             relation=relation, effect_model=effect_model,
                             window_n=n, training_log=log)
    model.metrics = evaluate_micro_causal(model, dataset, feats, test_ts, config)
    return model


def evaluate_micro_causal(model, dataset, feats, test_ts, config):
    n = model.window_n
    effect = model.relation.effect
    xs = [_encode_windows(model.cause_models[c], feats[c], test_ts, n, cache=False)
          for c in model.causes]
    v_hat = model.relation.forward(np.concatenate(xs, axis=1), cache=False)
    v_true = model.effect_model.encode(feats[effect][test_ts], cache=False)
    latent_kld = gaussian_kld(gaussian_stats(v_hat), gaussian_stats(v_true))
    feat_hat, mask_prob = model.effect_model.decode_latent(v_hat, cache=False)
    eff_series = dataset[effect]
    scaled_true = model.effect_model.scaler.apply(eff_series.values[test_ts])
    scaled_hat = scaled_attrs_from_features(feat_hat, model.effect_model.dim)
    rmse_scaled = float(np.sqrt(np.mean((scaled_hat - scaled_true) ** 2)))
    values_hat = model.effect_model.scaler.invert(scaled_hat) * (mask_prob > 0.5)
    rmse_unscaled = float(np.sqrt(np.mean((values_hat - eff_series.values[test_ts]) ** 2)))
    mask_bce = bce_loss(mask_prob, eff_series.mask[test_ts].astype(float))
    row = MetricRow(effect=effect, causes=",".join(model.causes),
                    rmse_scaled=rmse_scaled, rmse_unscaled=rmse_unscaled,
                    mask_bce=float(mask_bce), latent_kld=float(latent_kld))
    return row


def micro_causal_nse(model, dataset, test_ts):
    """Mean held-out NSE of the decoded effect prediction, unscaled."""
    effect = model.relation.effect
    feats = {name: featurize_series(dataset[name])
             for name in list(model.causes) + [effect]}
    xs = [_encode_windows(model.cause_models[c], feats[c], test_ts,
                          model.window_n, cache=False) for c in model.causes]
    v_hat = model.relation.forward(np.concatenate(xs, axis=1), cache=False)
    values_hat, _ = decode_node(model.effect_model, v_hat)
    obs = dataset[effect].values[test_ts]
    scores = []
    for a in range(obs.shape[1]):
        if obs[:, a].std() > 1e-12:
            scores.append(nse(values_hat[:, a], obs[:, a]))
    return float(np.mean(scores))


def relation_forward(model, cause_windows):
    """(predicted effect latent, decoded effect values) for one window.

    cause_windows maps each cause name to (values, months) with values
    shaped (window_n, cause dim).
    """
    n = model.window_n
    parts = []
    for c in model.causes:
        if c not in cause_windows:
            raise DataError(f"relation_forward: missing window for cause {c!r}")
        vals, months = cause_windows[c]
        vals = np.asarray(vals, dtype=float)
        months = np.asarray(months, dtype=int)
        cm = model.cause_models[c]
        if vals.shape != (n, cm.dim) or months.shape != (n,):
            raise DataError(
                f"relation_forward: incomplete window for {c!r}: "
                f"values {vals.shape}, months {months.shape}, need ({n}, {cm.dim})")
        if not np.all(np.isfinite(vals)):
            raise DataError(f"relation_forward: non-finite values in window for {c!r}")
        feats = _featurize_window(vals, months, cm.scaler)
        parts.append(cm.encode(feats, cache=False).reshape(-1))
    v_hat = model.relation.forward(np.concatenate(parts), cache=False)
    values, _mask = decode_node(model.effect_model, v_hat)
    return v_hat, values


def _featurize_window(vals, months, scaler):
    d = vals.shape[1]
    scaled = scaler.apply(vals) if scaler is not None else vals
    sel = np.arange(12) % d
    onehot = np.zeros((vals.shape[0], 12))
    onehot[np.arange(vals.shape[0]), months - 1] = 1.0
    return np.concatenate([scaled[:, sel], onehot], axis=1)


def train_relation_frozen(x_train, v_train, config, rng, causes=("x",), effect="y"):
    """Relation-only training on precomputed latents.

    Exploration evaluates many candidate relations; with the node
    encoders frozen this reduces to a small supervised fit in latent
    space (MSE plus the KLD batch penalty), which keeps strength
    evaluation cheap without touching the scoring semantics.
    """
    x_train = np.asarray(x_train, dtype=float)
    v_train = np.asarray(v_train, dtype=float)
    relation = RelationModel(causes, effect, config.window_n, config.latent_dim,
                             config.hidden_width, rng, in_dim=x_train.shape[1])
    adam = Adam(relation.parameters(), lr=config.lr)
    lam_k = config.lambda_kld
    for _epoch in range(config.explore_epochs):
        perm = rng.permutation(x_train.shape[0])
        for start in range(0, perm.size, config.batch_size):
            idx = perm[start:start + config.batch_size]
            relation.zero_grads()
            v_hat = relation.forward(x_train[idx], cache=True)
            loss = mse_loss(v_hat, v_train[idx])
            grad = mse_grad(v_hat, v_train[idx])
            if lam_k > 0.0 and idx.size >= 2:
                kval, kg = kld_batch_grad(v_hat, gaussian_stats(v_train[idx]))
                loss += lam_k * kval
                grad = grad + lam_k * kg
            if not np.isfinite(loss):
                raise TrainingError("frozen relation training diverged")
            relation.backward(grad)
            adam.step(relation.gradients())
    return relation


@dataclass
class StackState:
    latent_dim: int
    rank_estimates: dict = field(default_factory=dict)
    registry: dict = field(default_factory=dict)

    def components(self, effect):
        return list(self.registry.get(effect, []))


def estimate_rank(series):
    return int(np.linalg.matrix_rank(series.values))


def stack_component(state, effect, relation_id):
    """Register a trained relation at its effect node (tau = arrival order)."""
    comps = state.registry.setdefault(effect, [])
    if relation_id in comps:
        raise RegistryError(f"relation {relation_id} already stacked at {effect}")
    comps.append(relation_id)
    bound = state.rank_estimates.get(effect, 0) + len(comps)
    if state.latent_dim <= bound:
        warnings.warn(
            f"latent dim {state.latent_dim} <= rank+components {bound} at node "
            f"{effect}; representations may not disentangle", stacklevel=2)
    return state


@dataclass
class RoutingSpec:
    path: list
    input_selector: str = "raw"      # raw | latent
    output_selector: str = "decoded"  # decoded | latent


def route(spec, window, models):
    """Drive data through a chain of trained relations.

    models maps relation_id to MicroCausalModel. Multi-hop paths tile
    the single-step intermediate latent across the next cause window,
    which is the declared limit of this routing scheme.
    """
    if not spec.path:
        raise RoutingError("route: empty path")
    chain = []
    for rid in spec.path:
        if rid not in models:
            raise RoutingError(f"route: relation {rid} is not registered")
        chain.append(models[rid])
    for up, down in zip(chain, chain[1:]):
        if down.causes != (up.relation.effect,):
            raise RoutingError(
                f"route: broken chain, {down.relation_id} does not consume "
                f"{up.relation.effect!r} alone")
    first = chain[0]
    if spec.input_selector == "raw":
        v = relation_forward(first, window)[0]
    elif spec.input_selector == "latent":
        lat = np.asarray(window, dtype=float)
        if lat.shape != (first.relation.latent_dim * first.window_n * len(first.causes),):
            raise RoutingError("route: latent input has the wrong width")
        v = first.relation.forward(lat, cache=False)
    else:
        raise RoutingError(f"route: unknown input selector {spec.input_selector!r}")
    for hop in chain[1:]:
        x = np.tile(v, hop.window_n)
        v = hop.relation.forward(x, cache=False)
    if spec.output_selector == "latent":
        return v
    if spec.output_selector == "decoded":
        values, _mask = decode_node(chain[-1].effect_model, v)
        return values
    raise RoutingError(f"route: unknown output selector {spec.output_selector!r}")
