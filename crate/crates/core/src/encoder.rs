//! Region features, multi-label tag prediction and semantic features.
//!
//! Images pass through two `conv3x3 -> tanh -> 2x2 mean-pool` stages and a
//! linear projection, giving one D-wide vector per cell of a `grid x grid`
//! layout. Precomputed feature files skip the convolutional stack entirely.
//! The tag classifier averages region vectors and applies two affine layers
//! with a tanh in between, followed by a softmax over all L tags.

use std::sync::Arc;

use crate::config::TrainConfig;
use crate::corpus::FeatureRef;
use crate::error::{Error, Result};
use crate::model::names;
use crate::params::ParameterStore;
use crate::tape::{self, Tape, Var};
use crate::tensor::Tensor;

/// N region vectors of width D.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeatureMap {
    features: Tensor,
}

impl RegionFeatureMap {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::dim("region_features", features.shape(), &[0, 0]));
        }
        if !features.is_finite() {
            return Err(Error::Domain("region features contain non-finite values".into()));
        }
        Ok(RegionFeatureMap { features })
    }

    pub fn n_regions(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.features
    }

    pub fn into_tensor(self) -> Tensor {
        self.features
    }
}

/// What the encoder consumes for one image.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageInput {
    /// Precomputed `[N, D]` region features.
    Features(Tensor),
    /// Grayscale pixels in `[0, 1]`, shape `[side, side]`.
    Pixels(Tensor),
}

impl ImageInput {
    pub fn load(feature_ref: &FeatureRef) -> Result<Self> {
        match feature_ref {
            FeatureRef::Features(path) => {
                let t = Tensor::load(path)?;
                if t.rank() != 2 {
                    return Err(Error::Format {
                        offset: 4,
                        message: format!(
                            "{}: feature file must have shape [N, D], got {:?}",
                            path.display(),
                            t.shape()
                        ),
                    });
                }
                Ok(ImageInput::Features(t))
            }
            FeatureRef::Image(path) => Self::load_image(path, None),
        }
    }

    /// Like [`ImageInput::load`], but images are resampled to `side × side`.
    pub fn load_sized(feature_ref: &FeatureRef, side: usize) -> Result<Self> {
        match feature_ref {
            FeatureRef::Image(path) => Self::load_image(path, Some(side)),
            other => Self::load(other),
        }
    }

    fn load_image(path: &std::path::Path, side: Option<usize>) -> Result<Self> {
        let mut img = image::open(path)?.to_luma8();
        if let Some(side) = side {
            if img.dimensions() != (side as u32, side as u32) {
                img = image::imageops::resize(&img, side as u32, side as u32, image::imageops::FilterType::Triangle);
            }
        }
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        Ok(ImageInput::Pixels(Tensor::new(vec![h as usize, w as usize], data)?))
    }
}

/// Records the region feature extraction for `input`, returning an `[N, D]` node.
pub fn extract_region_features(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &TrainConfig,
    input: &ImageInput,
) -> Result<Var> {
    match input {
        ImageInput::Features(t) => {
            let map = RegionFeatureMap::new(t.clone())?;
            if map.dim() != cfg.feature_dim {
                return Err(Error::dim("region_features", t.shape(), &[map.n_regions(), cfg.feature_dim]));
            }
            Ok(tape.constant(map.into_tensor()))
        }
        ImageInput::Pixels(px) => {
            let side = cfg.image_side();
            if px.rank() != 2 || px.shape() != [side, side] {
                return Err(Error::Domain(format!(
                    "image must be {side}x{side} pixels for a {g}x{g} region grid, got {:?}",
                    px.shape(),
                    g = cfg.grid
                )));
            }
            let x = tape.constant(px.reshape(&[side * side, 1])?);
            let x = conv_stage(tape, store, x, side, 1, names::CONV1_W, names::CONV1_B)?;
            let x = conv_stage(tape, store, x, side / 2, cfg.conv1_channels, names::CONV2_W, names::CONV2_B)?;
            let proj = tape.param(store, names::PROJ_W)?;
            let proj_t = tape.transpose(proj)?;
            tape.matmul(x, proj_t)
        }
    }
}

/// 3x3 same-padded convolution, tanh, then 2x2 mean pooling. Input and
/// output are `[positions, channels]` with positions in row-major order.
fn conv_stage(
    tape: &mut Tape,
    store: &ParameterStore,
    x: Var,
    side: usize,
    cin: usize,
    w_name: &str,
    b_name: &str,
) -> Result<Var> {
    let cols = im2col_index(side, cin);
    let patches = tape.gather(x, cols, &[side * side, 9 * cin])?;
    let w = tape.param(store, w_name)?;
    let b = tape.param(store, b_name)?;
    let wt = tape.transpose(w)?;
    let y = tape.matmul(patches, wt)?;
    let y = tape.add_row(y, b)?;
    let y = tape.tanh(y)?;
    let pool = tape.constant(mean_pool_matrix(side));
    tape.matmul(pool, y)
}

fn im2col_index(side: usize, cin: usize) -> Arc<[Option<usize>]> {
    let mut idx = Vec::with_capacity(side * side * 9 * cin);
    for r in 0..side as isize {
        for c in 0..side as isize {
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (rr, cc) = (r + dr, c + dc);
                    let inside = (0..side as isize).contains(&rr) && (0..side as isize).contains(&cc);
                    for ch in 0..cin {
                        idx.push(inside.then(|| (rr as usize * side + cc as usize) * cin + ch));
                    }
                }
            }
        }
    }
    idx.into()
}

fn mean_pool_matrix(side: usize) -> Tensor {
    let half = side / 2;
    let mut m = Tensor::zeros(&[half * half, side * side]);
    let cols = side * side;
    for r in 0..half {
        for c in 0..half {
            let row = r * half + c;
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let src = (2 * r + dr) * side + 2 * c + dc;
                m.data_mut()[row * cols + src] = 0.25;
            }
        }
    }
    m
}

/// Softmax distribution over the L tags from `[N, D]` region features.
pub fn predict_tags(tape: &mut Tape, store: &ParameterStore, regions: Var) -> Result<Var> {
    let shape = tape.shape(regions).to_vec();
    let w1 = tape.param(store, names::MLC_W1)?;
    if shape.len() != 2 || tape.shape(w1)[1] != shape[1] {
        return Err(Error::dim("predict_tags", &shape, tape.shape(w1)));
    }
    let pooled = mean_rows(tape, regions)?;
    let b1 = tape.param(store, names::MLC_B1)?;
    let w2 = tape.param(store, names::MLC_W2)?;
    let b2 = tape.param(store, names::MLC_B2)?;
    let h = tape.matmul(w1, pooled)?;
    let h = tape.add(h, b1)?;
    let h = tape.tanh(h)?;
    let logits = tape.matmul(w2, h)?;
    let logits = tape.add(logits, b2)?;
    tape.softmax(logits)
}

/// Column means of an `[R, W]` node, as a `[W]` node.
pub fn mean_rows(tape: &mut Tape, m: Var) -> Result<Var> {
    let rows = tape.shape(m)[0];
    let mt = tape.transpose(m)?;
    let w = tape.constant(Tensor::full(&[rows], 1.0 / rows as f64));
    tape.matmul(mt, w)
}

/// Probability vector over tags.
#[derive(Clone, Debug, PartialEq)]
pub struct TagDistribution(pub Vec<f64>);

impl TagDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// `l / ||l||_1` for a binary tag indicator.
pub fn tag_target(l: &[f64]) -> Result<TagDistribution> {
    if l.iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::Domain("tag vector must be binary".into()));
    }
    let k = l.iter().filter(|&&x| x == 1.0).count();
    if k == 0 {
        return Err(Error::Domain("tag vector has no positive entry".into()));
    }
    let w = 1.0 / k as f64;
    Ok(TagDistribution(l.iter().map(|&x| x * w).collect()))
}

/// Ids of the `m` most probable tags, most probable first; ties go to the lower id.
pub fn top_m_tags(probs: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > probs.len() {
        return Err(Error::Domain(format!(
            "top-m needs 1 <= m <= L, got m={m}, L={}",
            probs.len()
        )));
    }
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    ids.truncate(m);
    Ok(ids)
}

/// Embedding rows of the selected tags, in selection order.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticFeatureSet {
    pub tag_ids: Vec<usize>,
    pub embeddings: Tensor,
}

pub fn top_m_semantic_features(
    dist: &TagDistribution,
    store: &ParameterStore,
    m: usize,
) -> Result<SemanticFeatureSet> {
    let table = store.require(names::TAG_EMBED)?;
    if table.rows() != dist.0.len() {
        return Err(Error::dim("top_m_semantic_features", table.shape(), &[dist.0.len()]));
    }
    let tag_ids = top_m_tags(&dist.0, m)?;
    let rows: Vec<Vec<f64>> = tag_ids.iter().map(|&i| table.row(i).to_vec()).collect();
    Ok(SemanticFeatureSet {
        tag_ids,
        embeddings: Tensor::from_rows(&rows)?,
    })
}

/// Tape nodes produced by the encoder for one image.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[N, D]` region features.
    pub regions: Var,
    /// `[L]` tag distribution.
    pub tag_probs: Var,
    /// Tags whose embeddings form the semantic features.
    pub tag_ids: Vec<usize>,
    /// `[M, E]` semantic features.
    pub semantic: Var,
}

/// Runs the encoder. With `gt_tags`, those tags lead the semantic set and the
/// remaining slots are filled from the prediction. M is capped at L.
pub fn encode(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &TrainConfig,
    input: &ImageInput,
    gt_tags: Option<&[usize]>,
) -> Result<EncoderOutput> {
    let regions = extract_region_features(tape, store, cfg, input)?;
    let tag_probs = predict_tags(tape, store, regions)?;
    let probs = tape.value(tag_probs).data().to_vec();
    let m = cfg.top_m.min(probs.len());
    let mut tag_ids: Vec<usize> = Vec::with_capacity(m);
    if let Some(gt) = gt_tags {
        for &t in gt.iter().take(m) {
            if !tag_ids.contains(&t) {
                tag_ids.push(t);
            }
        }
    }
    for t in top_m_tags(&probs, probs.len())? {
        if tag_ids.len() == m {
            break;
        }
        if !tag_ids.contains(&t) {
            tag_ids.push(t);
        }
    }
    let table = tape.param(store, names::TAG_EMBED)?;
    let semantic = tape.gather_rows(table, &tag_ids)?;
    Ok(EncoderOutput {
        regions,
        tag_probs,
        tag_ids,
        semantic,
    })
}

/// Tape-free tag prediction for a feature map.
pub fn predict_tag_distribution(
    store: &ParameterStore,
    cfg: &TrainConfig,
    input: &ImageInput,
) -> Result<TagDistribution> {
    let mut t = Tape::new();
    let regions = extract_region_features(&mut t, store, cfg, input)?;
    let p = predict_tags(&mut t, store, regions)?;
    Ok(TagDistribution(t.value(p).data().to_vec()))
}

/// Cross-entropy between two tag distributions.
pub fn tag_cross_entropy(pred: &TagDistribution, target: &TagDistribution) -> Result<f64> {
    tape::cross_entropy(&pred.0, &target.0)
}
