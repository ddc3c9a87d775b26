"""
Toy-scale transformer regressor with hand-written reverse mode and AdamW.
"""

import hashlib
import logging
import math
import time
import numpy as np

from pathlib import Path
from typing import (
    Any,
    Sequence,
)

from sofia_utils.io import (
    load_json_file,
    write_to_json_string,
)

from .basemodels import (
    FeatureMatrix,
    ModelConfig,
    TargetEncoding,
    TrainReport,
)
from .errors import (
    ArgumentError,
    ConfigError,
    DivergenceError,
    NotFound,
    ShapeError,
)
from .ingest import denormalize


type Params = dict[ str, np.ndarray]
type Batch  = Sequence[np.ndarray] | np.ndarray

LN_EPS          = 1e-5
GELU_C          = math.sqrt( 2.0 / math.pi)
SUMMARY_INIT    = 0.02
GRADCHECK_FLOOR = 1e-6


# =========================================================================================
# MODEL CONTAINER
# =========================================================================================

class TransformerRegressor :
    """
    Parameters and target encoding of the regressor \\
    Parameters live in a flat dict keyed by dotted names, e.g. `layers.0.attn.Wq`.
    """
    
    def __init__( self,
                  config : ModelConfig,
                  params : Params,
                  seed   : int,
                  target : TargetEncoding | None = None) -> None :
        
        self.config = config
        self.params = params
        self.seed   = seed
        self.target = target or TargetEncoding()
        
        return
    
    def n_stored(self) -> int :
        """ Number of stored parameter scalars """
        return int( sum( p.size for p in self.params.values() ) )
    
    def snapshot(self) -> Params :
        """ Deep copy of the parameters """
        return { name : p.copy() for name, p in self.params.items() }


def count_parameters( config : ModelConfig) -> int :
    """
    Closed-form number of trainable scalars \\
    I*D + D (embedding) + D (summary token)
    + L * ( 4D^2 + 4D (attention) + 4D (two layer norms) + 2DF + F + D (feed-forward) )
    + 2D (final layer norm) + D + 1 (head)
    """
    I, D, F, L = config.input_dim, config.d_model, config.d_ff, config.n_layers
    
    per_layer = 4 * D * D + 2 * D * F + 9 * D + F
    
    return I * D + 2 * D + L * per_layer + 3 * D + 1


def _xavier( rng : np.random.Generator, fan_in : int, fan_out : int, shape : tuple) -> np.ndarray :
    
    bound = math.sqrt( 6.0 / ( fan_in + fan_out ) )
    
    return rng.uniform( -bound, bound, size = shape)


def init_model( config : ModelConfig, seed : int = 0) -> TransformerRegressor :
    """
    Deterministic initialization \\
    Weights are Xavier-uniform, biases 0, layer-norm scales 1 and offsets 0;
    the summary token is drawn from N(0, 0.02^2). \\
    Args:
        config : Model hyperparameters
        seed   : PRNG seed
    Returns:
        TransformerRegressor
    """
    if config.d_model % config.n_heads :
        raise ConfigError(
            f"In init_model: d_model = {config.d_model} is not divisible by n_heads = {config.n_heads}"
        )
    
    rng = np.random.default_rng(seed)
    I, D, F = config.input_dim, config.d_model, config.d_ff
    
    params : Params = {
        "embed.W" : _xavier( rng, I, D, ( I, D)),
        "embed.b" : np.zeros(D),
        "summary" : rng.normal( 0.0, SUMMARY_INIT, size = D),
    }
    for l in range(config.n_layers) :
        pre = f"layers.{l}"
        params[f"{pre}.ln1.gamma"] = np.ones(D)
        params[f"{pre}.ln1.beta"]  = np.zeros(D)
        for proj in ( "q", "k", "v", "o") :
            params[f"{pre}.attn.W{proj}"] = _xavier( rng, D, D, ( D, D))
            params[f"{pre}.attn.b{proj}"] = np.zeros(D)
        params[f"{pre}.ln2.gamma"] = np.ones(D)
        params[f"{pre}.ln2.beta"]  = np.zeros(D)
        params[f"{pre}.ff.W1"]     = _xavier( rng, D, F, ( D, F))
        params[f"{pre}.ff.b1"]     = np.zeros(F)
        params[f"{pre}.ff.W2"]     = _xavier( rng, F, D, ( F, D))
        params[f"{pre}.ff.b2"]     = np.zeros(D)
    
    params["final_ln.gamma"] = np.ones(D)
    params["final_ln.beta"]  = np.zeros(D)
    params["head.W"]         = _xavier( rng, D, 1, ( D,))
    params["head.b"]         = np.zeros(1)
    
    return TransformerRegressor( config, params, seed)

# =========================================================================================
# BUILDING BLOCKS
# =========================================================================================

def positional_encoding( n_positions : int, d_model : int) -> np.ndarray :
    """
    Sinusoidal table of shape ( n_positions, d_model)
    """
    pos  = np.arange(n_positions)[ :, None]
    dims = np.arange( 0, d_model, 2)
    freq = np.exp( -math.log(10000.0) * dims / d_model )
    
    table = np.zeros( ( n_positions, d_model))
    table[ :, 0::2] = np.sin( pos * freq)
    table[ :, 1::2] = np.cos( pos * freq)[ :, : d_model // 2]
    
    return table


def _layer_norm( x : np.ndarray, gamma : np.ndarray, beta : np.ndarray) -> tuple[ np.ndarray, tuple] :
    
    mu   = x.mean( axis = -1, keepdims = True)
    var  = x.var(  axis = -1, keepdims = True)
    rstd = 1.0 / np.sqrt( var + LN_EPS)
    xhat = ( x - mu ) * rstd
    
    return xhat * gamma + beta, ( xhat, rstd, gamma)


def _layer_norm_backward( dy : np.ndarray, cache : tuple) -> tuple[ np.ndarray, np.ndarray, np.ndarray] :
    
    xhat, rstd, gamma = cache
    axes   = tuple( range( dy.ndim - 1) )
    dgamma = ( dy * xhat ).sum( axis = axes)
    dbeta  = dy.sum( axis = axes)
    
    dxhat = dy * gamma
    dx    = rstd * ( dxhat
                     - dxhat.mean( axis = -1, keepdims = True)
                     - xhat * ( dxhat * xhat ).mean( axis = -1, keepdims = True) )
    
    return dx, dgamma, dbeta


def _softmax( s : np.ndarray) -> np.ndarray :
    
    e = np.exp( s - s.max( axis = -1, keepdims = True) )
    
    return e / e.sum( axis = -1, keepdims = True)


def _gelu( u : np.ndarray) -> tuple[ np.ndarray, np.ndarray] :
    """ tanh-approximated GELU and its derivative """
    
    inner = GELU_C * ( u + 0.044715 * u**3 )
    t     = np.tanh(inner)
    out   = 0.5 * u * ( 1.0 + t )
    grad  = 0.5 * ( 1.0 + t ) + 0.5 * u * ( 1.0 - t**2 ) * GELU_C * ( 1.0 + 3 * 0.044715 * u**2 )
    
    return out, grad


def _split_heads( x : np.ndarray, h : int) -> np.ndarray :
    
    B, T, D = x.shape
    
    return x.reshape( B, T, h, D // h).transpose( 0, 2, 1, 3)


def _merge_heads( x : np.ndarray) -> np.ndarray :
    
    B, h, T, dh = x.shape
    
    return x.transpose( 0, 2, 1, 3).reshape( B, T, h * dh)

# =========================================================================================
# FORWARD AND BACKWARD
# =========================================================================================

def _as_sequences( model : TransformerRegressor, batch : Batch) -> list[np.ndarray] :
    
    cfg  = model.config
    seqs = [ np.asarray( s, dtype = float) for s in batch ]
    
    for i, s in enumerate(seqs) :
        if s.ndim != 2 or s.shape[1] != cfg.input_dim :
            raise ShapeError(
                f"In forward: Sequence {i} has shape {s.shape}, expected ( n, {cfg.input_dim})"
            )
        if not 1 <= s.shape[0] <= cfg.max_seq_len :
            raise ShapeError(
                f"In forward: Sequence {i} has length {s.shape[0]}, "
                f"expected 1..{cfg.max_seq_len}"
            )
    
    return seqs


def _length_groups( seqs : list[np.ndarray]) -> dict[ int, list[int]] :
    
    groups : dict[ int, list[int]] = {}
    for i, s in enumerate(seqs) :
        groups.setdefault( s.shape[0], []).append(i)
    
    return groups


def _forward_group( model : TransformerRegressor,
                    X     : np.ndarray,
                    rng   : np.random.Generator | None) -> tuple[ np.ndarray, dict[ str, Any]] :
    """
    Head outputs of a ( B, n, input_dim) block and the cache for backward
    """
    cfg, P = model.config, model.params
    B, n, _ = X.shape
    D, h    = cfg.d_model, cfg.n_heads
    p_drop  = cfg.dropout_p if rng is not None else 0.0
    scale   = 1.0 / math.sqrt(cfg.d_head)
    
    def dropout_mask( shape : tuple) -> np.ndarray | None :
        if p_drop == 0.0 :
            return None
        return ( rng.random(shape) >= p_drop ) / ( 1.0 - p_drop )
    
    E = X @ P["embed.W"] + P["embed.b"]
    H = np.concatenate( [ np.broadcast_to( P["summary"], ( B, 1, D)), E], axis = 1)
    H = H + positional_encoding( n + 1, D)
    
    cache : dict[ str, Any] = { "X" : X, "layers" : [] }
    for l in range(cfg.n_layers) :
        pre = f"layers.{l}"
        
        A, ln1 = _layer_norm( H, P[f"{pre}.ln1.gamma"], P[f"{pre}.ln1.beta"])
        Q = _split_heads( A @ P[f"{pre}.attn.Wq"] + P[f"{pre}.attn.bq"], h)
        K = _split_heads( A @ P[f"{pre}.attn.Wk"] + P[f"{pre}.attn.bk"], h)
        V = _split_heads( A @ P[f"{pre}.attn.Wv"] + P[f"{pre}.attn.bv"], h)
        
        attn = _softmax( ( Q @ K.transpose( 0, 1, 3, 2) ) * scale )
        O    = _merge_heads( attn @ V)
        Z    = O @ P[f"{pre}.attn.Wo"] + P[f"{pre}.attn.bo"]
        m1   = dropout_mask(Z.shape)
        H    = H + ( Z if m1 is None else Z * m1 )
        
        Bn, ln2 = _layer_norm( H, P[f"{pre}.ln2.gamma"], P[f"{pre}.ln2.beta"])
        U       = Bn @ P[f"{pre}.ff.W1"] + P[f"{pre}.ff.b1"]
        G, dG_U = _gelu(U)
        Y       = G @ P[f"{pre}.ff.W2"] + P[f"{pre}.ff.b2"]
        m2      = dropout_mask(Y.shape)
        H       = H + ( Y if m2 is None else Y * m2 )
        
        cache["layers"].append( { "A" : A, "ln1" : ln1, "Q" : Q, "K" : K, "V" : V,
                                  "attn" : attn, "O" : O, "m1" : m1,
                                  "Bn" : Bn, "ln2" : ln2, "G" : G, "dG_U" : dG_U, "m2" : m2 } )
    
    S, lnf = _layer_norm( H[ :, 0, :], P["final_ln.gamma"], P["final_ln.beta"])
    head   = S @ P["head.W"] + P["head.b"][0]
    
    cache.update( { "S" : S, "lnf" : lnf, "T" : n + 1 } )
    
    return head, cache


def _backward_group( model : TransformerRegressor,
                     cache : dict[ str, Any],
                     dhead : np.ndarray,
                     grads : Params) -> None :
    """
    Accumulate parameter gradients of one block given d loss / d head
    """
    cfg, P = model.config, model.params
    B      = dhead.shape[0]
    D      = cfg.d_model
    scale  = 1.0 / math.sqrt(cfg.d_head)
    
    grads["head.W"] += cache["S"].T @ dhead
    grads["head.b"] += dhead.sum()
    dS = np.outer( dhead, P["head.W"])
    
    dsum, dgf, dbf = _layer_norm_backward( dS, cache["lnf"])
    grads["final_ln.gamma"] += dgf
    grads["final_ln.beta"]  += dbf
    
    dH = np.zeros( ( B, cache["T"], D))
    dH[ :, 0, :] = dsum
    
    for l in reversed( range(cfg.n_layers) ) :
        pre = f"layers.{l}"
        c   = cache["layers"][l]
        
        # feed-forward branch
        dY = dH if c["m2"] is None else dH * c["m2"]
        grads[f"{pre}.ff.W2"] += np.einsum( "btf,btd->fd", c["G"], dY)
        grads[f"{pre}.ff.b2"] += dY.sum( axis = ( 0, 1))
        dU = ( dY @ P[f"{pre}.ff.W2"].T ) * c["dG_U"]
        grads[f"{pre}.ff.W1"] += np.einsum( "btd,btf->df", c["Bn"], dU)
        grads[f"{pre}.ff.b1"] += dU.sum( axis = ( 0, 1))
        dBn = dU @ P[f"{pre}.ff.W1"].T
        
        dx, dg, db = _layer_norm_backward( dBn, c["ln2"])
        grads[f"{pre}.ln2.gamma"] += dg
        grads[f"{pre}.ln2.beta"]  += db
        dH = dH + dx
        
        # attention branch
        dZ = dH if c["m1"] is None else dH * c["m1"]
        grads[f"{pre}.attn.Wo"] += np.einsum( "btd,bte->de", c["O"], dZ)
        grads[f"{pre}.attn.bo"] += dZ.sum( axis = ( 0, 1))
        dO = _split_heads( dZ @ P[f"{pre}.attn.Wo"].T, cfg.n_heads)
        
        attn = c["attn"]
        dA_w = dO @ c["V"].transpose( 0, 1, 3, 2)
        dV   = attn.transpose( 0, 1, 3, 2) @ dO
        dSc  = attn * ( dA_w - ( dA_w * attn ).sum( axis = -1, keepdims = True) ) * scale
        dQ   = dSc @ c["K"]
        dK   = dSc.transpose( 0, 1, 3, 2) @ c["Q"]
        
        dA = np.zeros_like(c["A"])
        for name, d in ( ( "q", dQ), ( "k", dK), ( "v", dV) ) :
            d = _merge_heads(d)
            grads[f"{pre}.attn.W{name}"] += np.einsum( "btd,bte->de", c["A"], d)
            grads[f"{pre}.attn.b{name}"] += d.sum( axis = ( 0, 1))
            dA += d @ P[f"{pre}.attn.W{name}"].T
        
        dx, dg, db = _layer_norm_backward( dA, c["ln1"])
        grads[f"{pre}.ln1.gamma"] += dg
        grads[f"{pre}.ln1.beta"]  += db
        dH = dH + dx
    
    grads["summary"] += dH[ :, 0, :].sum( axis = 0)
    dE = dH[ :, 1:, :]
    grads["embed.W"] += np.einsum( "bni,bnd->id", cache["X"], dE)
    grads["embed.b"] += dE.sum( axis = ( 0, 1))
    
    return


def _base_values( model   : TransformerRegressor,
                  seqs    : list[np.ndarray],
                  anchors : Sequence[float] | None) -> np.ndarray :
    """
    Value the scaled head output is added to \\
    Anchored models use the given anchors, else the denormalized cap_chg of each
    sequence's last step.
    """
    target = model.target
    if not target.anchored :
        return np.full( len(seqs), target.offset)
    
    if anchors is not None :
        if len(anchors) != len(seqs) :
            raise ArgumentError(
                f"In forward: Got {len(anchors)} anchors for {len(seqs)} sequences"
            )
        return np.asarray( anchors, dtype = float)
    
    if target.bounds is None :
        raise ArgumentError("In forward: Anchored model without cap_chg bounds needs explicit anchors")
    
    return denormalize( np.array( [ s[ -1, 0] for s in seqs ]), target.bounds)


def _run( model   : TransformerRegressor,
          batch   : Batch,
          anchors : Sequence[float] | None,
          rng     : np.random.Generator | None,
          maps    : bool) -> tuple[ np.ndarray, list, list] :
    
    seqs  = _as_sequences( model, batch)
    head  = np.zeros(len(seqs))
    attn  : list = [ None ] * len(seqs)
    parts : list = []
    
    for _, idx in sorted( _length_groups(seqs).items() ) :
        out, cache = _forward_group( model, np.stack( [ seqs[i] for i in idx ]), rng)
        head[idx]  = out
        parts.append( ( idx, cache) )
        if maps :
            for j, i in enumerate(idx) :
                attn[i] = [ c["attn"][j] for c in cache["layers"] ]
    
    preds = _base_values( model, seqs, anchors) + model.target.scale * head
    
    return preds, attn, parts


def forward( model   : TransformerRegressor,
             batch   : Batch,
             anchors : Sequence[float] | None = None) -> tuple[ list[float], list[ list[np.ndarray]] ] :
    """
    Predictions and attention maps \\
    Args:
        model   : Regressor
        batch   : Sequences of shape ( n, input_dim), n <= max_seq_len
        anchors : Per-sequence anchors overriding the ones read off the inputs
    Returns:
        ( one prediction per sequence,
          maps[sequence][layer] of shape ( n_heads, n + 1, n + 1) )
    """
    preds, attn, _ = _run( model, batch, anchors, None, True)
    
    return preds.tolist(), attn


def loss_mse( predictions : Sequence[float], labels : Sequence[float]) -> float :
    """
    Mean squared error
    """
    y_hat = np.asarray( predictions, dtype = float)
    y     = np.asarray( labels,      dtype = float)
    
    if y_hat.shape != y.shape or y.ndim != 1 or len(y) == 0 :
        raise ArgumentError(
            f"In loss_mse: Need equal nonempty lengths, got {len(y_hat)} and {len(y)}"
        )
    
    return float( np.mean( ( y_hat - y )**2 ) )


def _loss_and_grads( model   : TransformerRegressor,
                     batch   : Batch,
                     labels  : Sequence[float],
                     anchors : Sequence[float] | None,
                     rng     : np.random.Generator | None) -> tuple[ float, Params] :
    
    preds, _, parts = _run( model, batch, anchors, rng, False)
    loss  = loss_mse( preds, labels)
    dpred = 2.0 * ( preds - np.asarray( labels, dtype = float) ) / len(preds)
    
    grads = { name : np.zeros_like(p) for name, p in model.params.items() }
    for idx, cache in parts :
        _backward_group( model, cache, dpred[idx] * model.target.scale, grads)
    
    return loss, grads


def backward( model   : TransformerRegressor,
              batch   : Batch,
              labels  : Sequence[float],
              anchors : Sequence[float] | None = None) -> Params :
    """
    Exact gradients of `loss_mse` with respect to every parameter \\
    Returns:
        { parameter name : gradient array of the parameter's shape }
    """
    _, grads = _loss_and_grads( model, batch, labels, anchors, None)
    
    return grads


def gradient_check( model   : TransformerRegressor,
                    batch   : Batch,
                    labels  : Sequence[float],
                    anchors : Sequence[float] | None = None,
                    step    : float = 1e-4) -> dict[ str, float] :
    """
    Central-difference check of `backward` \\
    Returns:
        { parameter name : ||numeric - analytic|| / max( ||numeric|| + ||analytic||, floor) }
        where floor = 1e-6 * max( 1, largest analytic gradient norm ); exactly-zero
        gradients (key biases under softmax shift invariance) then compare against the
        scale of the whole gradient instead of their own round-off
    """
    analytic = backward( model, batch, labels, anchors)
    floor    = GRADCHECK_FLOOR * max( 1.0, max( float(np.linalg.norm(g)) for g in analytic.values() ) )
    
    def loss() -> float :
        preds, _, _ = _run( model, batch, anchors, None, False)
        return loss_mse( preds, labels)
    
    errors = {}
    for name, p in model.params.items() :
        numeric = np.zeros_like(p)
        flat    = p.reshape(-1)
        for i in range(flat.size) :
            orig    = flat[i]
            flat[i] = orig + step
            up      = loss()
            flat[i] = orig - step
            down    = loss()
            flat[i] = orig
            numeric.reshape(-1)[i] = ( up - down ) / ( 2.0 * step )
        
        diff = np.linalg.norm( numeric - analytic[name])
        norm = np.linalg.norm(numeric) + np.linalg.norm(analytic[name])
        errors[name] = float( diff / max( norm, floor) )
    
    return errors

# =========================================================================================
# OPTIMIZER
# =========================================================================================

class AdamW :
    """
    Adaptive moments with decoupled weight decay (applied to every parameter)
    """
    
    def __init__( self,
                  lr           : float = 1e-3,
                  betas        : tuple[ float, float] = ( 0.9, 0.999),
                  eps          : float = 1e-8,
                  weight_decay : float = 0.01) -> None :
        
        if lr < 0 or weight_decay < 0 :
            raise ArgumentError("In AdamW: lr and weight_decay must be non-negative")
        
        self.lr           = lr
        self.betas        = betas
        self.eps          = eps
        self.weight_decay = weight_decay
        self.t            = 0
        self.m : Params   = {}
        self.v : Params   = {}
        
        return
    
    def step( self, params : Params, grads : Params) -> None :
        """
        Update `params` in place
        """
        beta1, beta2 = self.betas
        self.t += 1
        bias1 = 1.0 - beta1 ** self.t
        bias2 = 1.0 - beta2 ** self.t
        
        for name, p in params.items() :
            g = grads[name]
            m = self.m.setdefault( name, np.zeros_like(p))
            v = self.v.setdefault( name, np.zeros_like(p))
            
            m *= beta1
            m += ( 1.0 - beta1 ) * g
            v *= beta2
            v += ( 1.0 - beta2 ) * g * g
            
            if self.weight_decay :
                p *= 1.0 - self.lr * self.weight_decay
            
            p -= ( self.lr / bias1 ) * m / ( np.sqrt( v / bias2) + self.eps )
        
        return
    
    def hyperparameters(self) -> dict[ str, float] :
        return { "lr"           : self.lr,
                 "beta1"        : self.betas[0],
                 "beta2"        : self.betas[1],
                 "eps"          : self.eps,
                 "weight_decay" : self.weight_decay }

# =========================================================================================
# TRAINING AND INFERENCE
# =========================================================================================

def params_sha256( params : Params) -> str :
    """
    SHA-256 over the parameters in name order
    """
    digest = hashlib.sha256()
    for name in sorted(params) :
        digest.update( name.encode() )
        digest.update( np.ascontiguousarray( params[name], dtype = np.float64).tobytes() )
    
    return digest.hexdigest()


def target_for( features : FeatureMatrix) -> TargetEncoding :
    """
    Anchored encoding scaled by the label range (1 mAh when the range is empty)
    """
    lo, hi = features.label_bounds
    
    return TargetEncoding( anchored = True,
                           offset   = 0.0,
                           scale    = ( hi - lo ) or 1.0,
                           bounds   = features.normalization[0] )


def _batches( idx : np.ndarray, batch_size : int) -> list[np.ndarray] :
    return [ idx[ i : i + batch_size ] for i in range( 0, len(idx), batch_size) ]


def _split_mse( model : TransformerRegressor, features : FeatureMatrix, idx : Sequence[int]) -> float :
    
    if not len(idx) :
        return 0.0
    
    preds = predict( model, features, idx)
    
    return loss_mse( preds, [ features.labels[i] for i in idx ])


def train( model        : TransformerRegressor,
           features     : FeatureMatrix,
           epochs       : int   = 5,
           batch_size   : int   = 16,
           lr           : float = 1e-3,
           weight_decay : float = 0.01) -> TrainReport :
    """
    AdamW training on the train split, with held-out MSE after every epoch \\
    Args:
        model        : Regressor, updated in place (its target encoding is reset
                       to the anchored encoding of `features`)
        features     : Feature matrix with split indices
        epochs       : Epochs to run
        batch_size   : Rows per update
        lr           : Learning rate
        weight_decay : Decoupled weight decay
    Returns:
        TrainReport
    """
    if epochs < 1 or batch_size < 1 :
        raise ArgumentError("In train: epochs and batch_size must be positive")
    if not features.train_idx :
        raise ArgumentError("In train: Feature matrix has no training rows")
    if features.window > model.config.max_seq_len :
        raise ShapeError(
            f"In train: window {features.window} exceeds max_seq_len {model.config.max_seq_len}"
        )
    
    model.target = target_for(features)
    optimizer    = AdamW( lr = lr, weight_decay = weight_decay)
    rng          = np.random.default_rng(model.seed)
    train_idx    = np.array( features.train_idx)
    sequences    = features.sequences()
    labels       = np.array( features.labels)
    anchors      = np.array( features.anchors)
    dropout_rng  = rng if model.config.dropout_p > 0 else None
    
    train_mse, test_mse, wall, bps = [], [], [], []
    for epoch in range( 1, epochs + 1) :
        
        start     = time.perf_counter()
        order     = rng.permutation(train_idx)
        batches   = _batches( order, batch_size)
        sq_error  = 0.0
        for rows in batches :
            last_finite = model.snapshot()
            loss, grads = _loss_and_grads( model, sequences[rows], labels[rows],
                                           anchors[rows], dropout_rng)
            if not math.isfinite(loss) :
                raise DivergenceError(
                    f"In train: Loss became non-finite in epoch {epoch}", last_finite
                )
            optimizer.step( model.params, grads)
            sq_error += loss * len(rows)
        
        seconds = time.perf_counter() - start
        train_mse.append( sq_error / len(train_idx) )
        test_mse.append( _split_mse( model, features, features.test_idx) )
        wall.append(seconds)
        bps.append( len(batches) / seconds if seconds > 0 else 0.0 )
        
        logging.info( "Epoch %d/%d train_mse=%.6f test_mse=%.6f (%.2fs, %.2f batches/s)",
                      epoch, epochs, train_mse[-1], test_mse[-1], wall[-1], bps[-1])
    
    hyper = optimizer.hyperparameters() | { "batch_size" : batch_size,
                                            "epochs"     : epochs,
                                            "seed"       : model.seed,
                                            "dropout_p"  : model.config.dropout_p }
    
    return TrainReport( train_mse          = tuple(train_mse),
                        test_mse           = tuple(test_mse),
                        wall_seconds       = tuple(wall),
                        batches_per_second = tuple(bps),
                        n_epochs           = epochs,
                        snapshot_sha256    = params_sha256(model.params),
                        hyperparameters    = hyper )


def predict( model : TransformerRegressor,
             data  : FeatureMatrix | Batch,
             idx   : Sequence[int] | None = None) -> list[float] :
    """
    Forward pass without gradient bookkeeping \\
    Args:
        model : Regressor
        data  : FeatureMatrix (anchors taken from it) or a raw batch of sequences
        idx   : Row subset of a FeatureMatrix (defaults to every row)
    Returns:
        One prediction per sequence
    """
    if isinstance( data, FeatureMatrix) :
        rows    = list( range(len(data.rows)) if idx is None else idx )
        batch   = data.sequences(rows)
        anchors = [ data.anchors[i] for i in rows ]
    else :
        batch   = data
        anchors = None
    
    if len(batch) == 0 :
        return []
    
    preds, _, _ = _run( model, batch, anchors if model.target.anchored else None, None, False)
    
    return preds.tolist()

# =========================================================================================
# CHECKPOINTS
# =========================================================================================

def save_model( model : TransformerRegressor, path : str | Path) -> Path :
    """
    JSON checkpoint { config, seed, target, parameters : { name : { shape, values } } }
    """
    path = Path(path)
    path.parent.mkdir( parents = True, exist_ok = True)
    
    payload = {
        "config"     : model.config.model_dump( mode = "json"),
        "seed"       : model.seed,
        "target"     : model.target.model_dump( mode = "json"),
        "parameters" : { name : { "shape"  : list(p.shape),
                                  "values" : p.reshape(-1).tolist() }
                         for name, p in sorted( model.params.items()) },
    }
    path.write_text( write_to_json_string( payload, indent = None) + "\n")
    logging.info( "Model checkpoint written to %s", path)
    
    return path


def load_model( path : str | Path) -> TransformerRegressor :
    """
    Inverse of `save_model`
    """
    path = Path(path)
    if not path.is_file() :
        raise NotFound(f"In load_model: Checkpoint '{path}' does not exist")
    
    payload = load_json_file(path)
    config  = ModelConfig.model_validate(payload["config"])
    params  = { name : np.array( entry["values"], dtype = float).reshape(entry["shape"])
                for name, entry in payload["parameters"].items() }
    
    model = TransformerRegressor( config, params, int(payload["seed"]),
                                  TargetEncoding.model_validate(payload["target"]) )
    if model.n_stored() != count_parameters(config) :
        raise ConfigError(
            f"In load_model: Checkpoint holds {model.n_stored()} scalars, "
            f"config implies {count_parameters(config)}"
        )
    
    return model
