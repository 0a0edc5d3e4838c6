//! Multi-head attention and the cross-frame transformer block.

use crate::autograd::Var;
use crate::error::{Error, Result};

use super::params::{Binder, Init};

/// `[C, H, W]` map to `[H*W, C]` tokens.
pub fn to_tokens(map: Var<'_>) -> Var<'_> {
    let s = map.shape();
    map.reshape(&[s[0], s[1] * s[2]]).transpose()
}

/// `[H*W, C]` tokens back to a `[C, H, W]` map.
pub fn from_tokens(tokens: Var<'_>, h: usize, w: usize) -> Var<'_> {
    let c = tokens.shape()[1];
    tokens.transpose().reshape(&[c, h, w])
}

/// Query/key/value/output projections of one attention layer; weights are
/// `[C, C]` applied as `x @ W + b`.
#[derive(Clone, Copy)]
pub struct Projections<'t> {
    pub wq: Var<'t>,
    pub bq: Var<'t>,
    pub wk: Var<'t>,
    pub bk: Var<'t>,
    pub wv: Var<'t>,
    pub bv: Var<'t>,
    pub wo: Var<'t>,
    pub bo: Var<'t>,
}

impl<'t> Projections<'t> {
    pub fn bind(b: &Binder<'t, '_>, prefix: &str, width: usize) -> Self {
        let w = |n: &str| b.param(&format!("{prefix}.{n}.weight"), &[width, width], Init::Lecun { fan_in: width });
        let z = |n: &str| b.param(&format!("{prefix}.{n}.bias"), &[width], Init::Zeros);
        Self {
            wq: w("q"),
            bq: z("q"),
            wk: w("k"),
            bk: z("k"),
            wv: w("v"),
            bv: z("v"),
            wo: w("out"),
            bo: z("out"),
        }
    }
}

/// Multi-head attention of `query` tokens over `kv` tokens:
/// per head `softmax(Q_h K_h^T / sqrt(D)) V_h`, heads concatenated, then the
/// output projection. Also returns each head's attention matrix.
pub fn mca_with_attention<'t>(
    query: Var<'t>,
    kv: Var<'t>,
    proj: &Projections<'t>,
    heads: usize,
) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let width = query.shape()[1];
    if heads == 0 || width % heads != 0 {
        return Err(Error::Config(format!(
            "embedding width {width} is not divisible by {heads} heads"
        )));
    }
    if kv.shape()[1] != width {
        return Err(Error::Shape(format!(
            "query width {width} but key/value width {}",
            kv.shape()[1]
        )));
    }
    let d = width / heads;
    let q = query.linear(proj.wq, proj.bq);
    let k = kv.linear(proj.wk, proj.bk);
    let v = kv.linear(proj.wv, proj.bv);
    let scale = 1.0 / (d as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.narrow_cols(h * d, d);
        let kh = k.narrow_cols(h * d, d);
        let vh = v.narrow_cols(h * d, d);
        let a = qh.matmul_nt(kh).scale(scale).softmax_rows();
        outs.push(a.matmul(vh));
        attn.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { Var::concat_cols(&outs) };
    Ok((cat.linear(proj.wo, proj.bo), attn))
}

pub fn mca<'t>(query: Var<'t>, kv: Var<'t>, proj: &Projections<'t>, heads: usize) -> Result<Var<'t>> {
    mca_with_attention(query, kv, proj, heads).map(|(out, _)| out)
}

#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub mca_residual: bool,
}

fn layer_norm<'t>(b: &Binder<'t, '_>, name: &str, x: Var<'t>, width: usize) -> Var<'t> {
    let g = b.param(&format!("{name}.gamma"), &[width], Init::Ones);
    let beta = b.param(&format!("{name}.beta"), &[width], Init::Zeros);
    x.layer_norm(g, beta, 1e-5)
}

/// `x' = MSA(LN x) + x`, `x'' = MCA(LN x', kv) [+ x']`, `out = MLP(LN x'') + x''`.
pub fn cross_frame_block<'t>(
    b: &Binder<'t, '_>,
    prefix: &str,
    x: Var<'t>,
    kv: Var<'t>,
    spec: BlockSpec,
) -> Result<Var<'t>> {
    let c = spec.width;
    let msa = Projections::bind(b, &format!("{prefix}.msa"), c);
    let mcp = Projections::bind(b, &format!("{prefix}.mca"), c);

    let n1 = layer_norm(b, &format!("{prefix}.ln1"), x, c);
    let x1 = mca(n1, n1, &msa, spec.heads)?.add(x);

    let n2 = layer_norm(b, &format!("{prefix}.ln2"), x1, c);
    let cross = mca(n2, kv, &mcp, spec.heads)?;
    let x2 = if spec.mca_residual { cross.add(x1) } else { cross };

    let n3 = layer_norm(b, &format!("{prefix}.ln3"), x2, c);
    let h = spec.mlp_hidden;
    let w1 = b.param(&format!("{prefix}.mlp.fc1.weight"), &[c, h], Init::Lecun { fan_in: c });
    let b1 = b.param(&format!("{prefix}.mlp.fc1.bias"), &[h], Init::Zeros);
    let w2 = b.param(&format!("{prefix}.mlp.fc2.weight"), &[h, c], Init::Lecun { fan_in: h });
    let b2 = b.param(&format!("{prefix}.mlp.fc2.bias"), &[c], Init::Zeros);
    Ok(n3.linear(w1, b1).gelu().linear(w2, b2).add(x2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{Array, Tape};
    use crate::model::params::ParamStore;

    fn ramp(shape: &[usize], k: f64) -> Array {
        Array::from_fn(shape, |i| (i as f64 * k).sin() + 0.3 * (i as f64 * 0.37).cos())
    }

    fn block_store(spec: BlockSpec, x: &Array, kv: &Array) -> ParamStore {
        let tape = Tape::new();
        let b = Binder::init(&tape, 3);
        cross_frame_block(&b, "blk", tape.constant(x.clone()), tape.constant(kv.clone()), spec).unwrap();
        b.into_store()
    }

    const SPEC: BlockSpec = BlockSpec { width: 8, heads: 2, mlp_hidden: 16, mca_residual: true };

    #[test]
    fn tokens_round_trip() {
        let tape = Tape::new();
        let m = ramp(&[3, 2, 5], 0.9);
        let t = to_tokens(tape.constant(m.clone()));
        assert_eq!(t.shape(), vec![10, 3]);
        assert_eq!(t.value().data()[3 * 4 + 1], m.data()[10 + 4]);
        assert_eq!(from_tokens(t, 2, 5).value().max_abs_diff(&m), 0.0);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let tape = Tape::new();
        let store = block_store(SPEC, &ramp(&[4, 8], 0.3), &ramp(&[6, 8], 0.5));
        let b = Binder::bind(&tape, &store, false);
        let p = Projections::bind(&b, "blk.mca", 8);
        let (out, attn) = mca_with_attention(tape.constant(ramp(&[4, 8], 0.3)), tape.constant(ramp(&[6, 8], 0.5)), &p, 2).unwrap();
        assert_eq!(out.shape(), vec![4, 8]);
        assert_eq!(attn.len(), 2);
        for a in attn {
            assert_eq!(a.shape(), vec![4, 6]);
            for row in a.value().data().chunks(6) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn zeroed_output_projections_give_identity_block() {
        let x = ramp(&[5, 8], 0.4);
        let kv = ramp(&[7, 8], 1.3);
        let mut store = block_store(SPEC, &x, &kv);
        for (name, value) in store.iter_mut() {
            if name.contains(".out.") || name.contains(".fc2.") {
                *value = Array::zeros(&value.shape().to_vec());
            }
        }
        let tape = Tape::new();
        let b = Binder::bind(&tape, &store, false);
        let out = cross_frame_block(&b, "blk", tape.constant(x.clone()), tape.constant(kv), SPEC).unwrap();
        assert!(out.value().max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn strict_block_drops_the_cross_residual() {
        let strict = BlockSpec { mca_residual: false, ..SPEC };
        let x = ramp(&[5, 8], 0.4);
        let kv = ramp(&[7, 8], 1.3);
        let mut store = block_store(strict, &x, &kv);
        for (name, value) in store.iter_mut() {
            if name.contains(".out.") || name.contains(".fc2.") {
                *value = Array::zeros(&value.shape().to_vec());
            }
        }
        let tape = Tape::new();
        let b = Binder::bind(&tape, &store, false);
        let out = cross_frame_block(&b, "blk", tape.constant(x), tape.constant(kv), strict).unwrap();
        assert_eq!(out.value().max_abs_diff(&Array::zeros(&[5, 8])), 0.0);
    }

    #[test]
    fn width_mismatches_are_errors() {
        let tape = Tape::new();
        let store = block_store(SPEC, &ramp(&[2, 8], 0.3), &ramp(&[2, 8], 0.5));
        let b = Binder::bind(&tape, &store, false);
        let p = Projections::bind(&b, "blk.mca", 8);
        let q = tape.constant(ramp(&[2, 8], 0.1));
        assert!(matches!(mca(q, q, &p, 3), Err(Error::Config(_))));
        assert!(matches!(mca(q, tape.constant(ramp(&[2, 4], 0.1)), &p, 2), Err(Error::Shape(_))));
    }
}
