//! The victim stack: task-pretrained image-processing net, jointly trained
//! hiding and extraction nets, and the query-counting black-box oracle that
//! is the only surface an attacker sees.

pub mod oracle;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{
    concat_channels, derive_seed, ChannelStack, Image, PairedDataset, PatternKind,
    WatermarkPattern,
};
use crate::metrics::{self, SuccessCriteria};
use crate::netcore::{adam_step, build_net, Activation, NetHandle, NetSpec, OptimState, Tape};

pub use oracle::{make_oracle, OracleHandle, Scenario};

/// Knobs shared by every training loop in the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Joint-phase only: ramp the watermark/clean loss weights linearly from
    /// zero over this many leading epochs. Keeps early training in the
    /// high-fidelity basin so the pair settles on a low-amplitude embedding;
    /// the configured weights apply unchanged afterwards.
    pub mark_warmup_epochs: usize,
    /// Joint-phase only: learning rate for the extractor when it should
    /// adapt faster than the hider. `None` uses `lr`.
    pub extractor_lr: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            batch_size: 8,
            lr: 2e-4,
            seed: 0,
            mark_warmup_epochs: 0,
            extractor_lr: None,
        }
    }
}

/// Secret key consumed by the keyed extractor variant. Pixel values are
/// quantized to the 8-bit grid so the key round-trips image files exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorKey {
    image: Image,
    id: u64,
}

impl ExtractorKey {
    pub fn generate(seed: u64, size: (usize, usize)) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "extractor-key"));
        let pixels = (0..size.0 * size.1)
            .map(|_| rng.random_range(0..=255u32) as f64 / 255.0)
            .collect();
        Ok(ExtractorKey { image: Image::new(size.0, size.1, pixels)?, id: seed })
    }

    pub fn from_image(image: Image, id: u64) -> Self {
        ExtractorKey { image, id }
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn id(&self) -> u64 {
        self.id
    }
}

/// Extraction network: either a single net, or the keyed three-subnet form
/// where image features and key features are summed before decoding.
#[derive(Debug, Clone)]
pub enum Extractor {
    Plain(NetHandle),
    Keyed { e_a: NetHandle, e_b: NetHandle, e_c: NetHandle },
}

pub enum ExTape {
    Plain(Tape),
    Keyed { a: Tape, b: Tape, c: Tape },
}

pub enum ExParamGrads {
    Plain(Vec<f64>),
    Keyed { a: Vec<f64>, b: Vec<f64>, c: Vec<f64> },
}

impl ExParamGrads {
    fn zeros_like(ex: &Extractor) -> ExParamGrads {
        match ex {
            Extractor::Plain(n) => ExParamGrads::Plain(vec![0.0; n.param_count()]),
            Extractor::Keyed { e_a, e_b, e_c } => ExParamGrads::Keyed {
                a: vec![0.0; e_a.param_count()],
                b: vec![0.0; e_b.param_count()],
                c: vec![0.0; e_c.param_count()],
            },
        }
    }

    fn add(&mut self, other: &ExParamGrads) {
        match (self, other) {
            (ExParamGrads::Plain(x), ExParamGrads::Plain(y)) => add_scaled(x, y, 1.0),
            (
                ExParamGrads::Keyed { a, b, c },
                ExParamGrads::Keyed { a: oa, b: ob, c: oc },
            ) => {
                add_scaled(a, oa, 1.0);
                add_scaled(b, ob, 1.0);
                add_scaled(c, oc, 1.0);
            }
            _ => unreachable!("extractor gradient kinds always match"),
        }
    }

    fn scale(&mut self, s: f64) {
        match self {
            ExParamGrads::Plain(x) => x.iter_mut().for_each(|v| *v *= s),
            ExParamGrads::Keyed { a, b, c } => {
                for vec in [a, b, c] {
                    vec.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }
}

fn add_scaled(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

impl Extractor {
    pub fn is_keyed(&self) -> bool {
        matches!(self, Extractor::Keyed { .. })
    }

    pub fn param_hash(&self) -> u64 {
        match self {
            Extractor::Plain(n) => n.param_hash(),
            Extractor::Keyed { e_a, e_b, e_c } => {
                e_a.param_hash() ^ e_b.param_hash().rotate_left(21) ^ e_c.param_hash().rotate_left(42)
            }
        }
    }

    /// True when every activation feeding the final head is ReLU.
    pub fn hidden_activations_all_relu(&self) -> bool {
        match self {
            Extractor::Plain(n) => n.spec().hidden_activations_all_relu(),
            Extractor::Keyed { e_a, e_b, e_c } => {
                let all_relu = |n: &NetHandle| {
                    n.spec().layers.iter().all(|l| l.activation == Activation::Relu)
                };
                all_relu(e_a) && all_relu(e_b) && e_c.spec().hidden_activations_all_relu()
            }
        }
    }

    pub fn forward(&self, x: &ChannelStack, key: Option<&Image>) -> Result<ChannelStack> {
        Ok(self.forward_cached(x, key)?.0)
    }

    pub(crate) fn forward_cached(
        &self,
        x: &ChannelStack,
        key: Option<&Image>,
    ) -> Result<(ChannelStack, ExTape)> {
        match self {
            Extractor::Plain(net) => {
                if key.is_some() {
                    return Err(Error::InvalidParameter(
                        "plain extractor does not take a key".into(),
                    ));
                }
                let (out, tape) = net.forward_cached(x)?;
                Ok((out, ExTape::Plain(tape)))
            }
            Extractor::Keyed { e_a, e_b, e_c } => {
                let key = key.ok_or_else(|| {
                    Error::InvalidParameter("keyed extractor requires a key".into())
                })?;
                let (fa, ta) = e_a.forward_cached(x)?;
                let (fb, tb) = e_b.forward_cached(&ChannelStack::from_image(key))?;
                let mut sum = fa;
                for (s, v) in sum.data_mut().iter_mut().zip(fb.data()) {
                    *s += v;
                }
                let (out, tc) = e_c.forward_cached(&sum)?;
                Ok((out, ExTape::Keyed { a: ta, b: tb, c: tc }))
            }
        }
    }

    /// Reverse pass; returns parameter grads and the gradient at the image
    /// input (the key input's gradient is not propagated anywhere).
    pub(crate) fn backward(
        &self,
        tape: &ExTape,
        grad_out: &ChannelStack,
    ) -> Result<(ExParamGrads, ChannelStack)> {
        match (self, tape) {
            (Extractor::Plain(net), ExTape::Plain(t)) => {
                let (pg, ig) = net.backward(t, grad_out)?;
                Ok((ExParamGrads::Plain(pg), ig))
            }
            (Extractor::Keyed { e_a, e_b, e_c }, ExTape::Keyed { a, b, c }) => {
                let (gc, dsum) = e_c.backward(c, grad_out)?;
                let (ga, dx) = e_a.backward(a, &dsum)?;
                let (gb, _dkey) = e_b.backward(b, &dsum)?;
                Ok((ExParamGrads::Keyed { a: ga, b: gb, c: gc }, dx))
            }
            _ => unreachable!("tape kind always matches extractor kind"),
        }
    }
}

/// Extracts the watermark estimate from an image, clamped into [0,1].
pub fn extract(extractor: &Extractor, image: &Image, key: Option<&ExtractorKey>) -> Result<Image> {
    let out = extractor.forward(&ChannelStack::from_image(image), key.map(|k| k.image()))?;
    out.into_image_clamped()
}

/// Per-phase summary numbers recorded during victim training.
#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub ipnet_holdout_psnr: Option<f64>,
    pub joint_epoch_losses: Vec<f64>,
    pub holdout_sr_e: Option<f64>,
    pub fidelity_psnr: Option<f64>,
    pub blank_rate: Option<f64>,
}

/// Trained victim: frozen image-processing net plus the hider/extractor
/// pair and the embedded watermark.
#[derive(Debug, Clone)]
pub struct VictimBundle {
    pub ipnet: NetHandle,
    pub hnet: NetHandle,
    pub enet: Extractor,
    pub watermark: WatermarkPattern,
    pub key: Option<ExtractorKey>,
    pub alpha: (f64, f64, f64),
    pub training_log: TrainingLog,
}

impl VictimBundle {
    /// Runs the image-processing net. Owner-side only; the oracle never
    /// exposes this intermediate.
    pub fn process(&self, a: &Image) -> Result<Image> {
        self.ipnet.forward(&ChannelStack::from_image(a))?.into_image_clamped()
    }

    /// Embeds the bundle's watermark into a processed image.
    pub fn mark(&self, b: &Image) -> Result<Image> {
        let stacked = concat_channels(b, &self.watermark)?;
        self.hnet.forward(&stacked)?.into_image_clamped()
    }

    /// Full deployed composition: process then mark.
    pub fn onet(&self, a: &Image) -> Result<Image> {
        let b = self.process(a)?;
        self.mark(&b)
    }

    /// Extraction with the bundle's own key, when it has one.
    pub fn extract_own(&self, x: &Image) -> Result<Image> {
        extract(&self.enet, x, self.key.as_ref())
    }
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// dLoss/dOut for `weight * mean((out - target)^2)`.
fn msq_grad(out: &ChannelStack, target: &[f64], weight: f64) -> ChannelStack {
    let n = out.data().len() as f64;
    let mut g = out.clone();
    for (gv, t) in g.data_mut().iter_mut().zip(target) {
        *gv = weight * 2.0 * (*gv - t) / n;
    }
    g
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Trains the image-processing net on (degraded, clean) pairs with MSE.
/// Returns the net and its held-out denoising PSNR.
pub fn train_ipnet(
    dataset: &PairedDataset,
    spec: &NetSpec,
    opts: &TrainOptions,
) -> Result<(NetHandle, f64)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("ipnet training needs a nonempty dataset".into()));
    }
    if spec.final_activation() != Some(Activation::Sigmoid) {
        return Err(Error::Spec("image-emitting net must end in sigmoid".into()));
    }
    if spec.input_channels != 1 || spec.output_channels() != 1 {
        return Err(Error::Spec("ipnet must map one channel to one channel".into()));
    }
    let mut net = build_net(spec, derive_seed(opts.seed, "ipnet"))?;
    let holdout_n = (dataset.len() / 10).clamp(1, dataset.len() - 1).max(1);
    let (train, holdout) = if dataset.len() == 1 {
        (dataset.pairs(), dataset.pairs())
    } else {
        dataset.pairs().split_at(dataset.len() - holdout_n)
    };
    let mut optim = OptimState::new(net.param_count(), opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "ipnet-shuffle"));
    for epoch in 0..opts.epochs {
        let order = shuffled_indices(train.len(), &mut rng);
        for batch in order.chunks(opts.batch_size) {
            let per_sample: Vec<(Vec<f64>, f64)> = batch
                .par_iter()
                .map(|&i| {
                    let (a, b) = &train[i];
                    let input = ChannelStack::from_image(a);
                    let (out, tape) = net.forward_cached(&input)?;
                    let loss = mean_sq_diff(out.data(), b.pixels());
                    let gout = msq_grad(&out, b.pixels(), 1.0);
                    let (pg, _) = net.backward(&tape, &gout)?;
                    Ok((pg, loss))
                })
                .collect::<Result<_>>()?;
            let mut grads = vec![0.0; net.param_count()];
            let mut batch_loss = 0.0;
            for (pg, loss) in &per_sample {
                add_scaled(&mut grads, pg, 1.0 / batch.len() as f64);
                batch_loss += loss / batch.len() as f64;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "ipnet loss became {batch_loss} at epoch {epoch}"
                )));
            }
            adam_step(&mut optim, net.params_mut(), &grads)?;
        }
    }
    let mut psnr_sum = 0.0;
    for (a, b) in holdout {
        let out = net.forward(&ChannelStack::from_image(a))?.into_image_clamped()?;
        psnr_sum += metrics::psnr(&out, b)?.db();
    }
    Ok((net, psnr_sum / holdout.len() as f64))
}

/// How the joint phase builds its extractor.
pub(crate) enum ExtractorSpecs {
    Plain(NetSpec),
    Keyed { e_a: NetSpec, e_b: NetSpec, e_c: NetSpec, key: ExtractorKey },
}

fn validate_joint_specs(hnet_spec: &NetSpec, ex: &ExtractorSpecs) -> Result<()> {
    if hnet_spec.input_channels != 2 {
        return Err(Error::Spec("hiding net takes image+pattern, needs 2 input channels".into()));
    }
    if hnet_spec.final_activation() != Some(Activation::Sigmoid) || hnet_spec.output_channels() != 1
    {
        return Err(Error::Spec("hiding net must emit one sigmoid channel".into()));
    }
    match ex {
        ExtractorSpecs::Plain(spec) => {
            if spec.input_channels != 1 || spec.output_channels() != 1 {
                return Err(Error::Spec("extractor must map one channel to one channel".into()));
            }
            if spec.final_activation() != Some(Activation::Sigmoid) {
                return Err(Error::Spec("extractor must end in sigmoid".into()));
            }
        }
        ExtractorSpecs::Keyed { e_a, e_b, e_c, .. } => {
            if e_a.input_channels != 1 || e_b.input_channels != 1 {
                return Err(Error::Spec("keyed extractor subnets take one channel".into()));
            }
            if e_a.output_channels() != e_b.output_channels()
                || e_c.input_channels != e_a.output_channels()
            {
                return Err(Error::Spec(
                    "keyed extractor feature widths must agree between subnets".into(),
                ));
            }
            if e_c.final_activation() != Some(Activation::Sigmoid) || e_c.output_channels() != 1 {
                return Err(Error::Spec("keyed extractor head must emit one sigmoid channel".into()));
            }
        }
    }
    Ok(())
}

struct ExOptim {
    states: Vec<OptimState>,
}

impl ExOptim {
    fn new(ex: &Extractor, lr: f64) -> ExOptim {
        let states = match ex {
            Extractor::Plain(n) => vec![OptimState::new(n.param_count(), lr)],
            Extractor::Keyed { e_a, e_b, e_c } => vec![
                OptimState::new(e_a.param_count(), lr),
                OptimState::new(e_b.param_count(), lr),
                OptimState::new(e_c.param_count(), lr),
            ],
        };
        ExOptim { states }
    }

    fn step(&mut self, ex: &mut Extractor, grads: &ExParamGrads) -> Result<()> {
        match (ex, grads) {
            (Extractor::Plain(n), ExParamGrads::Plain(g)) => {
                adam_step(&mut self.states[0], n.params_mut(), g)
            }
            (Extractor::Keyed { e_a, e_b, e_c }, ExParamGrads::Keyed { a, b, c }) => {
                adam_step(&mut self.states[0], e_a.params_mut(), a)?;
                adam_step(&mut self.states[1], e_b.params_mut(), b)?;
                adam_step(&mut self.states[2], e_c.params_mut(), c)
            }
            _ => unreachable!("gradient kinds always match"),
        }
    }
}

/// Joint hider/extractor training on already-processed clean images.
///
/// Per sample: `b' = HNet(b (+) mark)`, then the hiding, watermark, and
/// clean losses are combined with the alpha weights. The keyed variant adds
/// a wrong-key clean-loss term so extraction fails without the right key.
pub(crate) fn train_embedder_extractor(
    clean_train: &[Image],
    watermark: &WatermarkPattern,
    hnet_spec: &NetSpec,
    ex_specs: ExtractorSpecs,
    alpha: (f64, f64, f64),
    opts: &TrainOptions,
) -> Result<(NetHandle, Extractor, Vec<f64>)> {
    if clean_train.is_empty() {
        return Err(Error::EmptyInput("joint training needs clean images".into()));
    }
    if watermark.kind() != PatternKind::Mark {
        return Err(Error::Pattern("joint training embeds a mark-kind pattern".into()));
    }
    validate_joint_specs(hnet_spec, &ex_specs)?;
    let dims = clean_train[0].dims();
    if watermark.dims() != dims {
        return Err(Error::Dimension("watermark dims must match the dataset".into()));
    }
    let mut hnet = build_net(hnet_spec, derive_seed(opts.seed, "hnet"))?;
    let (mut enet, key) = match &ex_specs {
        ExtractorSpecs::Plain(spec) => {
            (Extractor::Plain(build_net(spec, derive_seed(opts.seed, "enet"))?), None)
        }
        ExtractorSpecs::Keyed { e_a, e_b, e_c, key } => (
            Extractor::Keyed {
                e_a: build_net(e_a, derive_seed(opts.seed, "enet-a"))?,
                e_b: build_net(e_b, derive_seed(opts.seed, "enet-b"))?,
                e_c: build_net(e_c, derive_seed(opts.seed, "enet-c"))?,
            },
            Some(key.clone()),
        ),
    };
    let white = vec![1.0; dims.0 * dims.1];
    let mark_px = watermark.image().pixels().to_vec();
    let mut hnet_optim = OptimState::new(hnet.param_count(), opts.lr);
    let mut ex_optim = ExOptim::new(&enet, opts.extractor_lr.unwrap_or(opts.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "joint-shuffle"));
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    let mut step: u64 = 0;
    for epoch in 0..opts.epochs {
        let warm = if opts.mark_warmup_epochs == 0 {
            1.0
        } else {
            ((epoch + 1) as f64 / opts.mark_warmup_epochs as f64).min(1.0)
        };
        let alpha = (alpha.0, warm * alpha.1, warm * alpha.2);
        let order = shuffled_indices(clean_train.len(), &mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for batch in order.chunks(opts.batch_size) {
            step += 1;
            let wrong_key = match &key {
                None => None,
                Some(true_key) => {
                    let mut attempt = 0u64;
                    loop {
                        let cand = ExtractorKey::generate(
                            derive_seed(opts.seed, &format!("wrong-key/{step}/{attempt}")),
                            dims,
                        )?;
                        if metrics::ncc(cand.image(), true_key.image())? < 0.9 {
                            break Some(cand);
                        }
                        attempt += 1;
                    }
                }
            };
            let key_img = key.as_ref().map(|k| k.image());
            let per_sample: Vec<(Vec<f64>, ExParamGrads, f64)> = batch
                .par_iter()
                .map(|&i| {
                    let b = &clean_train[i];
                    let stacked = concat_channels(b, watermark)?;
                    let (b_prime, h_tape) = hnet.forward_cached(&stacked)?;
                    let (e_marked, t_marked) = enet.forward_cached(&b_prime, key_img)?;
                    let b_stack = ChannelStack::from_image(b);
                    let (e_clean, t_clean) = enet.forward_cached(&b_stack, key_img)?;
                    let l_hide = mean_sq_diff(b_prime.data(), b.pixels());
                    let l_mark = mean_sq_diff(e_marked.data(), &mark_px);
                    let l_clean = mean_sq_diff(e_clean.data(), &white);
                    let mut loss = alpha.0 * l_hide + alpha.1 * l_mark + alpha.2 * l_clean;

                    let g_marked = msq_grad(&e_marked, &mark_px, alpha.1);
                    let (mut ex_grads, d_bprime_mark) = enet.backward(&t_marked, &g_marked)?;
                    let g_clean = msq_grad(&e_clean, &white, alpha.2);
                    let (ex_grads_clean, _) = enet.backward(&t_clean, &g_clean)?;
                    ex_grads.add(&ex_grads_clean);
                    // Wrong-key term: detached from the hider, shapes only
                    // the extractor.
                    if let Some(wk) = &wrong_key {
                        let (e_wrong, t_wrong) =
                            enet.forward_cached(&b_prime, Some(wk.image()))?;
                        loss += alpha.2 * mean_sq_diff(e_wrong.data(), &white);
                        let g_wrong = msq_grad(&e_wrong, &white, alpha.2);
                        let (ex_grads_wrong, _) = enet.backward(&t_wrong, &g_wrong)?;
                        ex_grads.add(&ex_grads_wrong);
                    }
                    let mut g_bprime = msq_grad(&b_prime, b.pixels(), alpha.0);
                    for (g, extra) in g_bprime.data_mut().iter_mut().zip(d_bprime_mark.data()) {
                        *g += extra;
                    }
                    let (h_grads, _) = hnet.backward(&h_tape, &g_bprime)?;
                    Ok((h_grads, ex_grads, loss))
                })
                .collect::<Result<_>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut h_grads = vec![0.0; hnet.param_count()];
            let mut ex_grads = ExParamGrads::zeros_like(&enet);
            let mut batch_loss = 0.0;
            for (hg, eg, loss) in &per_sample {
                add_scaled(&mut h_grads, hg, inv);
                ex_grads.add(eg);
                batch_loss += loss * inv;
            }
            ex_grads.scale(inv);
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "joint loss became {batch_loss} at epoch {epoch}"
                )));
            }
            adam_step(&mut hnet_optim, hnet.params_mut(), &h_grads)?;
            ex_optim.step(&mut enet, &ex_grads)?;
            epoch_loss += batch_loss;
            epoch_batches += 1;
        }
        epoch_losses.push(epoch_loss / epoch_batches.max(1) as f64);
    }
    Ok((hnet, enet, epoch_losses))
}

fn carve_holdout(images: Vec<Image>) -> (Vec<Image>, Vec<Image>) {
    let n = images.len();
    if n < 2 {
        return (images.clone(), images);
    }
    let holdout_n = (n / 8).clamp(1, 64);
    let mut train = images;
    let holdout = train.split_off(n - holdout_n);
    (train, holdout)
}

/// Held-out victim quality numbers.
#[derive(Debug, Clone, Copy)]
pub struct VictimEval {
    pub sr_e: f64,
    pub fidelity_psnr_db: f64,
    pub blank_rate: f64,
}

/// Evaluates a bundle on clean processed images: extraction success on
/// marked outputs, fidelity of the marking step, and the clean blank rate.
pub fn evaluate_victim(
    bundle: &VictimBundle,
    clean: &[Image],
    criteria: &SuccessCriteria,
) -> Result<VictimEval> {
    if clean.is_empty() {
        return Err(Error::EmptyInput("victim evaluation needs images".into()));
    }
    let null = crate::imaging::null_watermark(clean[0].dims())?;
    let mut extracted = Vec::with_capacity(clean.len());
    let mut psnr_sum = 0.0;
    let mut blank_hits = 0usize;
    for b in clean {
        let b_prime = bundle.mark(b)?;
        psnr_sum += metrics::psnr(&b_prime, b)?.db();
        extracted.push(bundle.extract_own(&b_prime)?);
        let clean_out = bundle.extract_own(b)?;
        if metrics::ncc(&clean_out, null.image()).map(|v| v > criteria.nc_threshold).unwrap_or(false)
        {
            blank_hits += 1;
        }
    }
    Ok(VictimEval {
        sr_e: metrics::success_rate(&extracted, &bundle.watermark, criteria)?,
        fidelity_psnr_db: psnr_sum / clean.len() as f64,
        blank_rate: blank_hits as f64 / clean.len() as f64,
    })
}

/// Trains the hider/extractor pair over a frozen image-processing net.
///
/// The processed domain is computed once up front (the net is frozen), and
/// a parameter-hash guard verifies it stayed untouched.
pub fn train_victim_joint(
    ipnet: &NetHandle,
    dataset: &PairedDataset,
    watermark: &WatermarkPattern,
    hnet_spec: &NetSpec,
    enet_spec: &NetSpec,
    alpha: (f64, f64, f64),
    opts: &TrainOptions,
) -> Result<VictimBundle> {
    train_victim_inner(
        ipnet,
        dataset,
        watermark,
        hnet_spec,
        ExtractorSpecs::Plain(enet_spec.clone()),
        alpha,
        opts,
    )
}

/// Keyed variant: extraction requires the exact key, enforced by an explicit
/// wrong-key training term.
#[allow(clippy::too_many_arguments)]
pub fn train_victim_keyed(
    ipnet: &NetHandle,
    dataset: &PairedDataset,
    watermark: &WatermarkPattern,
    hnet_spec: &NetSpec,
    ea_spec: &NetSpec,
    eb_spec: &NetSpec,
    ec_spec: &NetSpec,
    key: ExtractorKey,
    alpha: (f64, f64, f64),
    opts: &TrainOptions,
) -> Result<VictimBundle> {
    train_victim_inner(
        ipnet,
        dataset,
        watermark,
        hnet_spec,
        ExtractorSpecs::Keyed {
            e_a: ea_spec.clone(),
            e_b: eb_spec.clone(),
            e_c: ec_spec.clone(),
            key,
        },
        alpha,
        opts,
    )
}

fn train_victim_inner(
    ipnet: &NetHandle,
    dataset: &PairedDataset,
    watermark: &WatermarkPattern,
    hnet_spec: &NetSpec,
    ex_specs: ExtractorSpecs,
    alpha: (f64, f64, f64),
    opts: &TrainOptions,
) -> Result<VictimBundle> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("joint training needs a nonempty dataset".into()));
    }
    let ipnet_hash_before = ipnet.param_hash();
    let mut processed = Vec::with_capacity(dataset.len());
    for (a, _) in dataset.pairs() {
        processed.push(ipnet.forward(&ChannelStack::from_image(a))?.into_image_clamped()?);
    }
    let (train, holdout) = carve_holdout(processed);
    let key = match &ex_specs {
        ExtractorSpecs::Keyed { key, .. } => Some(key.clone()),
        ExtractorSpecs::Plain(_) => None,
    };
    let (hnet, enet, epoch_losses) =
        train_embedder_extractor(&train, watermark, hnet_spec, ex_specs, alpha, opts)?;
    if ipnet.param_hash() != ipnet_hash_before {
        return Err(Error::Optimizer(
            "frozen ipnet parameters changed during joint training".into(),
        ));
    }
    let mut bundle = VictimBundle {
        ipnet: ipnet.clone(),
        hnet,
        enet,
        watermark: watermark.clone(),
        key,
        alpha,
        training_log: TrainingLog { joint_epoch_losses: epoch_losses, ..Default::default() },
    };
    let eval = evaluate_victim(&bundle, &holdout, &SuccessCriteria::default())?;
    bundle.training_log.holdout_sr_e = Some(eval.sr_e);
    bundle.training_log.fidelity_psnr = Some(eval.fidelity_psnr_db);
    bundle.training_log.blank_rate = Some(eval.blank_rate);
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{render_watermark, synth_dataset, WatermarkStyle};

    fn tiny_specs() -> (NetSpec, NetSpec, NetSpec) {
        let ipnet = NetSpec::conv_stack(1, &[6], 1, 3, Activation::Relu, Activation::Sigmoid);
        let hnet = NetSpec::conv_stack(2, &[8, 8], 1, 3, Activation::LeakyRelu, Activation::Sigmoid)
            .with_skip(crate::netcore::SkipFrom::Input, 2);
        let enet = NetSpec::conv_stack(1, &[8], 1, 3, Activation::Relu, Activation::Sigmoid);
        (ipnet, hnet, enet)
    }

    #[test]
    fn zero_epoch_ipnet_equals_initialization() {
        let ds = synth_dataset(0, 4, (32, 32)).unwrap();
        let (ipnet_spec, _, _) = tiny_specs();
        let opts = TrainOptions { epochs: 0, seed: 5, ..Default::default() };
        let (net, _) = train_ipnet(&ds, &ipnet_spec, &opts).unwrap();
        let fresh = build_net(&ipnet_spec, derive_seed(5, "ipnet")).unwrap();
        assert_eq!(net.params(), fresh.params());
    }

    #[test]
    fn ipnet_training_is_deterministic() {
        let ds = synth_dataset(1, 8, (32, 32)).unwrap();
        let (ipnet_spec, _, _) = tiny_specs();
        let opts = TrainOptions { epochs: 2, seed: 9, ..Default::default() };
        let (a, psnr_a) = train_ipnet(&ds, &ipnet_spec, &opts).unwrap();
        let (b, psnr_b) = train_ipnet(&ds, &ipnet_spec, &opts).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(psnr_a, psnr_b);
    }

    #[test]
    fn ipnet_rejects_non_sigmoid_head() {
        let ds = synth_dataset(0, 2, (32, 32)).unwrap();
        let bad = NetSpec::conv_stack(1, &[4], 1, 3, Activation::Relu, Activation::Relu);
        assert!(train_ipnet(&ds, &bad, &TrainOptions::default()).is_err());
    }

    #[test]
    fn joint_training_rejects_non_sigmoid_extractor() {
        let ds = synth_dataset(0, 4, (32, 32)).unwrap();
        let (ipnet_spec, hnet_spec, _) = tiny_specs();
        let bad_enet = NetSpec::conv_stack(1, &[8], 1, 3, Activation::Relu, Activation::Relu);
        let mark = render_watermark(WatermarkStyle::Checker, 0, (32, 32)).unwrap();
        let opts = TrainOptions { epochs: 0, ..Default::default() };
        let (ipnet, _) = train_ipnet(&ds, &ipnet_spec, &opts).unwrap();
        let err = train_victim_joint(
            &ipnet,
            &ds,
            &mark,
            &hnet_spec,
            &bad_enet,
            (1e4, 1e4, 1e4),
            &opts,
        );
        assert!(err.is_err());
    }

    #[test]
    fn extractor_key_roundtrips_8bit() {
        let key = ExtractorKey::generate(3, (32, 32)).unwrap();
        for &p in key.image().pixels() {
            let q = (p * 255.0).round() / 255.0;
            assert_eq!(p, q, "key pixel {p} is not on the 8-bit grid");
        }
    }

    #[test]
    fn plain_extractor_rejects_key() {
        let (_, _, enet_spec) = tiny_specs();
        let ex = Extractor::Plain(build_net(&enet_spec, 0).unwrap());
        let img = Image::constant(32, 32, 0.5).unwrap();
        let key = ExtractorKey::generate(0, (32, 32)).unwrap();
        assert!(extract(&ex, &img, Some(&key)).is_err());
        assert!(extract(&ex, &img, None).is_ok());
    }

    #[test]
    fn keyed_extractor_requires_key() {
        let ea = NetSpec::conv_stack(1, &[], 6, 3, Activation::Relu, Activation::Relu);
        let eb = NetSpec::conv_stack(1, &[], 6, 3, Activation::Relu, Activation::Relu);
        let ec = NetSpec::conv_stack(6, &[], 1, 3, Activation::Relu, Activation::Sigmoid);
        let ex = Extractor::Keyed {
            e_a: build_net(&ea, 1).unwrap(),
            e_b: build_net(&eb, 2).unwrap(),
            e_c: build_net(&ec, 3).unwrap(),
        };
        let img = Image::constant(32, 32, 0.5).unwrap();
        assert!(extract(&ex, &img, None).is_err());
        let key = ExtractorKey::generate(0, (32, 32)).unwrap();
        assert!(extract(&ex, &img, Some(&key)).is_ok());
    }

    #[test]
    fn extraction_is_deterministic() {
        let (_, _, enet_spec) = tiny_specs();
        let ex = Extractor::Plain(build_net(&enet_spec, 4).unwrap());
        let img = synth_dataset(2, 1, (32, 32)).unwrap().clean(0).clone();
        let a = extract(&ex, &img, None).unwrap();
        let b = extract(&ex, &img, None).unwrap();
        assert_eq!(a.pixels(), b.pixels());
    }

    #[test]
    fn frozen_ipnet_hash_is_checked() {
        // The guard holds on the normal path.
        let ds = synth_dataset(7, 6, (32, 32)).unwrap();
        let (ipnet_spec, hnet_spec, enet_spec) = tiny_specs();
        let opts = TrainOptions { epochs: 1, batch_size: 4, seed: 2, ..Default::default() };
        let (ipnet, _) = train_ipnet(&ds, &ipnet_spec, &opts).unwrap();
        let hash = ipnet.param_hash();
        let mark = render_watermark(WatermarkStyle::Checker, 0, (32, 32)).unwrap();
        let bundle = train_victim_joint(
            &ipnet,
            &ds,
            &mark,
            &hnet_spec,
            &enet_spec,
            (1e4, 1e4, 1e4),
            &opts,
        )
        .unwrap();
        assert_eq!(bundle.ipnet.param_hash(), hash);
    }

    #[test]
    fn joint_training_is_deterministic() {
        let ds = synth_dataset(11, 6, (32, 32)).unwrap();
        let (ipnet_spec, hnet_spec, enet_spec) = tiny_specs();
        let opts = TrainOptions { epochs: 1, batch_size: 4, seed: 3, ..Default::default() };
        let (ipnet, _) = train_ipnet(&ds, &ipnet_spec, &opts).unwrap();
        let mark = render_watermark(WatermarkStyle::Logo, 1, (32, 32)).unwrap();
        let run = || {
            train_victim_joint(&ipnet, &ds, &mark, &hnet_spec, &enet_spec, (1e4, 1e4, 1e4), &opts)
                .unwrap()
        };
        let x = run();
        let y = run();
        assert_eq!(x.hnet.params(), y.hnet.params());
        match (&x.enet, &y.enet) {
            (Extractor::Plain(a), Extractor::Plain(b)) => assert_eq!(a.params(), b.params()),
            _ => panic!("expected plain extractors"),
        }
        assert_eq!(x.training_log.holdout_sr_e, y.training_log.holdout_sr_e);
    }
}
