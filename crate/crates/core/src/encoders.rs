//! Modality encoders: a masked per-group transformer for genomics, an
//! affine patch projector standing in for the pretrained slide encoder, and
//! a hashed bag-of-words embedder with a trainable adapter standing in for
//! the frozen text model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bags::{GenomicBag, GenomicGroup, TextBag, WsiBag};
use crate::error::{Error, Result};
use crate::nn::{l2_normalize_rows, AttentionBlock, Linear, ParamBuilder};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Sinusoidal position embedding of one position.
pub fn positional_encoding(pos: usize, d_model: usize) -> Result<Vec<f64>> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::invalid(format!("d_model must be even and positive, got {d_model}")));
    }
    let mut out = vec![0.0; d_model];
    for m in 0..d_model / 2 {
        let angle = pos as f64 / 10000f64.powf((2 * m) as f64 / d_model as f64);
        out[2 * m] = angle.sin();
        out[2 * m + 1] = angle.cos();
    }
    Ok(out)
}

/// Variable-length set of `d`-dimensional vectors with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub features: Tensor,
    pub mask: Vec<bool>,
}

impl FeatureBag {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// One group's encoder: scalar lift to `d_model`, then a transformer layer.
#[derive(Clone, Copy, Debug)]
pub struct GenomicEncoder {
    pub lift: Linear,
    pub block: AttentionBlock,
}

/// Parameter handles of every encoder.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub genomic: Vec<GenomicEncoder>,
    pub patch: Linear,
    pub text_adapter: Linear,
    pub d_model: usize,
    pub d_patch: usize,
}

impl EncoderParams {
    pub fn new(b: &mut ParamBuilder<'_>, d_patch: usize, d_model: usize, heads: usize, hidden: usize) -> Result<Self> {
        if d_model % 2 != 0 {
            return Err(Error::invalid(format!("d_model must be even, got {d_model}")));
        }
        b.scoped("enc", |b| {
            let genomic = GenomicGroup::ALL
                .iter()
                .map(|grp| {
                    b.scoped(&format!("gen_{}", grp.abbrev().to_lowercase()), |b| {
                        Ok(GenomicEncoder {
                            lift: Linear::no_bias(b, "lift", 1, d_model)?,
                            block: AttentionBlock::new(b, "layer", d_model, heads, hidden)?,
                        })
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EncoderParams {
                genomic,
                patch: Linear::new(b, "patch", d_patch, d_model)?,
                text_adapter: Linear::identity(b, "text_adapter", d_model)?,
                d_model,
                d_patch,
            })
        })
    }
}

/// Scales one gene's post-lift token; used for perturbation checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenScale {
    pub group: GenomicGroup,
    pub position: usize,
    pub factor: f64,
}

/// Output of [`encode_genomic`].
#[derive(Clone, Debug)]
pub struct GenomicFeatures {
    /// `6 × d_model`; rows of absent groups are zero.
    pub features: Var,
    pub present: [bool; 6],
    /// Post-lift token matrix (`len × d_model`) of each present group.
    pub tokens: [Option<Var>; 6],
}

impl GenomicFeatures {
    pub fn present_rows(&self) -> Vec<usize> {
        (0..6).filter(|&i| self.present[i]).collect()
    }
}

/// Encodes the six genomic groups to one `d_model` vector each.
///
/// Padded positions are excluded as attention keys and from the mean pool,
/// so their stored values never reach the output.
pub fn encode_genomic(
    g: &mut Graph,
    p: &ParamStore,
    bag: &GenomicBag,
    enc: &EncoderParams,
    scale: Option<TokenScale>,
) -> Result<GenomicFeatures> {
    let values = GenomicGroup::ALL.map(|grp| bag.values(grp));
    let masks = GenomicGroup::ALL.map(|grp| bag.mask(grp));
    encode_genomic_slices(g, p, &values, &masks, enc, scale)
}

/// [`encode_genomic`] over raw per-group slices. Values at masked positions
/// may be arbitrary; they are ignored.
pub fn encode_genomic_slices(
    g: &mut Graph,
    p: &ParamStore,
    values: &[&[f64]; 6],
    masks: &[&[bool]; 6],
    enc: &EncoderParams,
    scale: Option<TokenScale>,
) -> Result<GenomicFeatures> {
    let d = enc.d_model;
    let mut rows = Vec::with_capacity(6);
    let mut present = [false; 6];
    let mut tokens: [Option<Var>; 6] = [None; 6];
    for grp in GenomicGroup::ALL {
        let i = grp.index();
        let mask = masks[i];
        if values[i].len() != mask.len() {
            return Err(Error::Shape {
                op: "encode_genomic",
                lhs: vec![values[i].len()],
                rhs: vec![mask.len()],
            });
        }
        let observed: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        if observed.is_empty() {
            rows.push(g.constant(1, d, vec![0.0; d]));
            continue;
        }
        present[i] = true;
        let n = mask.len();
        let x = g.constant(n, 1, values[i].to_vec());
        let mut e = enc.genomic[i].lift.forward(g, p, x)?;
        if let Some(s) = scale.filter(|s| s.group == grp) {
            if s.position >= n {
                return Err(Error::invalid(format!("token {} out of {n} genes", s.position)));
            }
            let mut col = vec![1.0; n];
            col[s.position] = s.factor;
            let c = g.constant(n, 1, col);
            e = g.mul(e, c)?;
        }
        tokens[i] = Some(e);
        let mut pe = Vec::with_capacity(n * d);
        for pos in 0..n {
            pe.extend(positional_encoding(pos, d)?);
        }
        let pe = g.constant(n, d, pe);
        let h0 = g.add(e, pe)?;
        let h = enc.genomic[i].block.forward(g, p, h0, h0, Some(mask))?;
        let kept = g.gather_rows(h, &observed)?;
        rows.push(g.mean(kept, Some(0)));
    }
    let features = g.concat(&rows, 0)?;
    Ok(GenomicFeatures {
        features,
        present,
        tokens,
    })
}

/// Applies the patch projector to every patch of the bag.
pub fn project_patches(g: &mut Graph, p: &ParamStore, bag: &WsiBag, enc: &EncoderParams) -> Result<Var> {
    if bag.patch_dim() != enc.d_patch {
        return Err(Error::Shape {
            op: "project_patches",
            lhs: vec![bag.patch_count(), bag.patch_dim()],
            rhs: vec![enc.d_patch, enc.d_model],
        });
    }
    let x = g.tensor(bag.features());
    enc.patch.forward(g, p, x)
}

/// Plain-value wrapper around [`project_patches`].
pub fn project_patch_bag(p: &ParamStore, bag: &WsiBag, enc: &EncoderParams) -> Result<FeatureBag> {
    let mut g = Graph::new();
    let v = project_patches(&mut g, p, bag, enc)?;
    Ok(FeatureBag {
        features: g.to_tensor(v),
        mask: vec![true; bag.patch_count()],
    })
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Frozen hashed word-embedding table, reproducible from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedder {
    table: Vec<f64>,
    rows: usize,
    dim: usize,
    seed: u64,
}

impl TextEmbedder {
    pub fn new(seed: u64, rows: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..rows * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        TextEmbedder { table, rows, dim, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lowercased alphanumeric word tokens.
    pub fn tokens(sentence: &str) -> Vec<String> {
        sentence
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    /// Mean of the hashed rows of the sentence's tokens.
    pub fn mean_embedding(&self, sentence: &str) -> Result<Vec<f64>> {
        let toks = Self::tokens(sentence);
        if toks.is_empty() {
            return Err(Error::invalid("cannot embed an empty sentence"));
        }
        let mut out = vec![0.0; self.dim];
        for t in &toks {
            let row = (fnv1a64(t.as_bytes()) % self.rows as u64) as usize;
            for (o, v) in out.iter_mut().zip(&self.table[row * self.dim..(row + 1) * self.dim]) {
                *o += v;
            }
        }
        let n = toks.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }
}

/// Embeds one sentence to a unit `1 × d_model` row.
pub fn embed_text(g: &mut Graph, p: &ParamStore, emb: &TextEmbedder, enc: &EncoderParams, sentence: &str) -> Result<Var> {
    let m = emb.mean_embedding(sentence)?;
    let x = g.constant(1, emb.dim, m);
    let y = enc.text_adapter.forward(g, p, x)?;
    l2_normalize_rows(g, y)
}

/// Embeds the four sentences of a text bag to a `4 × d_model` matrix.
pub fn embed_text_bag(g: &mut Graph, p: &ParamStore, emb: &TextEmbedder, enc: &EncoderParams, bag: &TextBag) -> Result<Var> {
    let mut data = Vec::with_capacity(4 * emb.dim);
    for s in bag.sentences() {
        data.extend(emb.mean_embedding(s)?);
    }
    let x = g.constant(4, emb.dim, data);
    let y = enc.text_adapter.forward(g, p, x)?;
    l2_normalize_rows(g, y)
}
