//! Small trainable masked-token scorer.
//!
//! Architecture: token + position embeddings, one single-head self-attention
//! layer, and a per-mask readout over a closed vocabulary (hidden width 32).
//! An optional continuous prefix block is prepended to the embedded sequence;
//! the backend parameters themselves are frozen after initialization — only
//! prefix state may be trained, through [`TinyBackend::grad_prefix`].
//!
//! The frozen weights are structured rather than pure noise: the output
//! readout is tied to the token embeddings and the value matrix is close to
//! the identity, so a token present in the window raises the fill
//! probability of that same token at the mask. This mirrors the copy bias of
//! real pretrained masked language models and gives unseen-user scoring a
//! text-driven signal path; untied random weights would leave nothing for
//! the discrete prompt to act on.
//!
//! For one mask at sequence position `a` over the embedded sequence `z`
//! (prefix rows first, then token rows):
//!
//! ```text
//! q = z[a]·Wq     K = z·Wk     V = z·Wv
//! A = softmax(q·Kᵀ / √h)       ctx = A·V
//! u = tanh(z[a] + ctx)         s = u·W_out + b_out
//! log p = log_softmax(s)
//! ```
//!
//! A label's fill score is `exp(mean log p)` over its tokens
//! (length-normalized), and the mask's positive probability is
//! `S⁺ / (S⁺ + S⁻)` over the verbalizer's label sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::Verbalizer;
use crate::prefix::BlockShape;
use crate::prompt::{EnsembledPrompt, MASK};
use crate::tokenize::WhitespaceTokenizer;
use crate::util::{derive_rng, sha256_hex};

use super::{validate_request, AspectScores, Backend, BackendDescriptor};

/// Hidden width of embeddings, attention, and prefix rows.
pub const HIDDEN_WIDTH: usize = 32;
/// Size of the position table; later tokens reuse the last position vector.
pub const MAX_POSITIONS: usize = 256;
/// Fallback token for out-of-vocabulary input.
pub const UNK: &str = "<unk>";

const FORMAT_VERSION: u32 = 1;

/// Frozen parameters of the tiny backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TinyParams {
    format_version: u32,
    /// Sorted, deduplicated closed vocabulary.
    pub vocab: Vec<String>,
    /// Number of prefix positions accepted in front of the sequence.
    pub k: usize,
    tok_emb: Array2<f64>,
    pos_emb: Array2<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    w_out: Array2<f64>,
    b_out: Array1<f64>,
}

impl TinyParams {
    /// Initialize frozen parameters over a closed vocabulary drawn from the
    /// given texts (whitespace tokens), deterministically from `seed`.
    pub fn init<'a>(texts: impl IntoIterator<Item = &'a str>, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::BadParameter(
                "tiny backend needs at least one prefix position (k >= 1)".into(),
            ));
        }
        let mut vocab_set: std::collections::BTreeSet<String> = texts
            .into_iter()
            .flat_map(|t| t.split_whitespace().map(str::to_owned))
            .collect();
        vocab_set.insert(UNK.to_owned());
        vocab_set.insert(MASK.to_owned());
        let vocab: Vec<String> = vocab_set.into_iter().collect();
        let v = vocab.len();
        let h = HIDDEN_WIDTH;

        let sample = |stream: &str, shape: (usize, usize), std: f64| -> Array2<f64> {
            let mut rng = derive_rng(seed, stream, 0);
            let normal = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_fn(shape, |_| normal.sample(&mut rng))
        };

        let unit = 1.0 / (h as f64).sqrt();
        let tok_emb = sample("tiny-tok-emb", (v, h), unit);
        let pos_emb = sample("tiny-pos-emb", (MAX_POSITIONS, h), 0.02);
        let wq = sample("tiny-wq", (h, h), 0.25 * unit);
        let wk = sample("tiny-wk", (h, h), 0.25 * unit);
        // Near-identity values: tokens mostly pass their own embedding into
        // the attention mix.
        let mut wv = sample("tiny-wv", (h, h), 0.05);
        for i in 0..h {
            wv[(i, i)] += 0.75;
        }
        // Tied readout: score of vocabulary entry v is u·emb_v.
        let w_out = tok_emb.t().to_owned();
        let b_out = Array1::zeros(v);

        Ok(TinyParams {
            format_version: FORMAT_VERSION,
            vocab,
            k,
            tok_emb,
            pos_emb,
            wq,
            wk,
            wv,
            w_out,
            b_out,
        })
    }

    fn validate(&self) -> Result<()> {
        let v = self.vocab.len();
        let h = HIDDEN_WIDTH;
        if self.format_version != FORMAT_VERSION {
            return Err(Error::BadParameter(format!(
                "tiny backend format version {} unsupported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if v == 0 || self.k == 0 {
            return Err(Error::BadParameter(
                "tiny backend requires a non-empty vocabulary and k >= 1".into(),
            ));
        }
        if !self.vocab.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::BadParameter(
                "tiny backend vocabulary must be sorted and unique".into(),
            ));
        }
        if !self.vocab.iter().any(|t| t == UNK) {
            return Err(Error::BadParameter(format!(
                "tiny backend vocabulary must contain `{UNK}`"
            )));
        }
        let shapes = [
            ("tok_emb", self.tok_emb.dim(), (v, h)),
            ("pos_emb", self.pos_emb.dim(), (MAX_POSITIONS, h)),
            ("wq", self.wq.dim(), (h, h)),
            ("wk", self.wk.dim(), (h, h)),
            ("wv", self.wv.dim(), (h, h)),
            ("w_out", self.w_out.dim(), (h, v)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Shape(format!(
                    "tiny backend `{name}` is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        if self.b_out.len() != v {
            return Err(Error::Shape(format!(
                "tiny backend `b_out` has {} entries, expected {v}",
                self.b_out.len()
            )));
        }
        Ok(())
    }
}

/// The tiny backend: frozen [`TinyParams`] plus a vocabulary index.
pub struct TinyBackend {
    params: TinyParams,
    index: BTreeMap<String, usize>,
    unk_id: usize,
}

/// Cached forward state for one mask slot.
struct MaskForward {
    position: usize,
    q: Array1<f64>,
    attn: Array1<f64>,
    u: Array1<f64>,
    softmax_s: Array1<f64>,
    /// (token ids, raw fill score) per positive label.
    pos_raws: Vec<(Vec<usize>, f64)>,
    neg_raws: Vec<(Vec<usize>, f64)>,
    s_pos: f64,
    s_neg: f64,
    prob: f64,
}

/// Cached forward state for one prompt.
struct ForwardPass {
    z: Array2<f64>,
    kmat: Array2<f64>,
    vmat: Array2<f64>,
    k_eff: usize,
    masks: Vec<MaskForward>,
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|x| (x - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.mapv(|x| (x - max).exp()).sum().ln();
    logits.mapv(|x| x - lse)
}

impl TinyBackend {
    pub fn new(mut params: TinyParams) -> Result<Self> {
        params.validate()?;
        // Canonicalize memory layout: arrays built from transposed views
        // carry reversed strides, and stride patterns steer the matrix
        // kernels onto differently rounding summation orders. Forcing
        // standard layout keeps scores bit-identical across construction
        // paths (fresh init vs. reload from disk).
        for m in [
            &mut params.tok_emb,
            &mut params.pos_emb,
            &mut params.wq,
            &mut params.wk,
            &mut params.wv,
            &mut params.w_out,
        ] {
            if !m.is_standard_layout() {
                *m = m.as_standard_layout().into_owned();
            }
        }
        let index = params
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect::<BTreeMap<_, _>>();
        let unk_id = index[UNK];
        Ok(TinyBackend {
            params,
            index,
            unk_id,
        })
    }

    /// Convenience constructor: build the vocabulary from `texts` and
    /// initialize fresh frozen parameters.
    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        TinyBackend::new(TinyParams::init(texts, k, seed)?)
    }

    pub fn params(&self) -> &TinyParams {
        &self.params
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn vocab_size(&self) -> usize {
        self.params.vocab.len()
    }

    /// Content hash of all frozen parameters; unchanged by prefix training.
    pub fn params_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.params).expect("parameters serialize");
        sha256_hex(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.params).expect("parameters serialize");
        fs::write(path, text).map_err(|e| Error::write_io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::read_io(path, e))?;
        let params: TinyParams = serde_json::from_str(&text).map_err(|e| Error::Schema {
            line: 0,
            msg: format!("cannot parse tiny backend parameters from {}: {e}", path.display()),
        })?;
        TinyBackend::new(params)
    }

    fn token_id(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&self.unk_id)
    }

    fn label_token_ids(&self, label: &str) -> Vec<usize> {
        label.split_whitespace().map(|t| self.token_id(t)).collect()
    }

    /// Full forward pass over one prompt, caching everything the backward
    /// pass needs.
    fn forward(&self, prompt: &EnsembledPrompt, verbalizers: &[Verbalizer]) -> Result<ForwardPass> {
        validate_request(&self.descriptor(), prompt, verbalizers)?;

        let joined = prompt.composed.joined_text();
        let tokens: Vec<&str> = joined.split_whitespace().collect();
        let mask_rel: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.starts_with(MASK))
            .map(|(i, _)| i)
            .collect();
        if mask_rel.len() != verbalizers.len() {
            return Err(Error::MaskCount {
                expected: verbalizers.len(),
                found: mask_rel.len(),
            });
        }

        let h = HIDDEN_WIDTH;
        let k_eff = prompt.prefix.as_ref().map_or(0, |b| b.states.nrows());
        let n = k_eff + tokens.len();
        let mut z = Array2::<f64>::zeros((n, h));
        if let Some(block) = &prompt.prefix {
            z.slice_mut(s![0..k_eff, ..]).assign(&block.states);
        }
        for (i, token) in tokens.iter().enumerate() {
            let id = self.token_id(token);
            let pos = i.min(MAX_POSITIONS - 1);
            let row = &self.params.tok_emb.row(id) + &self.params.pos_emb.row(pos);
            z.row_mut(k_eff + i).assign(&row);
        }

        let kmat = z.dot(&self.params.wk);
        let vmat = z.dot(&self.params.wv);
        let scale = 1.0 / (h as f64).sqrt();

        let masks = mask_rel
            .iter()
            .zip(verbalizers)
            .map(|(&rel, verbalizer)| {
                let a = k_eff + rel;
                let q = z.row(a).dot(&self.params.wq);
                let logits = kmat.dot(&q) * scale;
                let attn = softmax(&logits);
                let ctx = vmat.t().dot(&attn);
                let u = (&z.row(a) + &ctx).mapv(f64::tanh);
                let s_logits = self.params.w_out.t().dot(&u) + &self.params.b_out;
                let logp = log_softmax(&s_logits);
                let softmax_s = softmax(&s_logits);

                let raws = |labels: &[String]| -> Vec<(Vec<usize>, f64)> {
                    labels
                        .iter()
                        .map(|label| {
                            let ids = self.label_token_ids(label);
                            let mean: f64 =
                                ids.iter().map(|&id| logp[id]).sum::<f64>() / ids.len() as f64;
                            (ids, mean.exp())
                        })
                        .collect()
                };
                let pos_raws = raws(&verbalizer.positive_labels);
                let neg_raws = raws(&verbalizer.negative_labels);
                let s_pos: f64 = pos_raws.iter().map(|(_, r)| r).sum();
                let s_neg: f64 = neg_raws.iter().map(|(_, r)| r).sum();
                let prob = s_pos / (s_pos + s_neg);
                MaskForward {
                    position: a,
                    q,
                    attn,
                    u,
                    softmax_s,
                    pos_raws,
                    neg_raws,
                    s_pos,
                    s_neg,
                    prob,
                }
            })
            .collect();

        Ok(ForwardPass {
            z,
            kmat,
            vmat,
            k_eff,
            masks,
        })
    }
}

impl Backend for TinyBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "tiny",
            supports_prefix: true,
            block_shape: Some(BlockShape::new(self.params.k, HIDDEN_WIDTH)),
            differentiable: true,
            tokenizer: std::sync::Arc::new(WhitespaceTokenizer),
        }
    }

    fn score(&self, prompt: &EnsembledPrompt, verbalizers: &[Verbalizer]) -> Result<AspectScores> {
        let pass = self.forward(prompt, verbalizers)?;
        let probs = prompt
            .composed
            .slots()
            .into_iter()
            .zip(&pass.masks)
            .map(|(slot, mf)| (slot, mf.prob))
            .collect();
        Ok(AspectScores {
            probs,
            window_ordinal: prompt.composed.window_ordinal,
        })
    }

    /// Gradient of `upstream · Σ_masks p(mask)` with respect to the prefix
    /// block, exact (verified against central finite differences).
    fn grad_prefix(
        &self,
        prompt: &EnsembledPrompt,
        verbalizers: &[Verbalizer],
        upstream: f64,
    ) -> Result<Array2<f64>> {
        if prompt.prefix.is_none() {
            return Err(Error::NoPrefix(
                "gradient requested for a prompt without a prefix block".into(),
            ));
        }
        let pass = self.forward(prompt, verbalizers)?;
        let h = HIDDEN_WIDTH;
        let n = pass.z.nrows();
        let v = self.params.vocab.len();
        let scale = 1.0 / (h as f64).sqrt();

        let mut dz = Array2::<f64>::zeros((n, h));
        let mut dkmat = Array2::<f64>::zeros((n, h));
        let mut dvmat = Array2::<f64>::zeros((n, h));

        for mf in &pass.masks {
            // d(prob)/d(S±) for prob = S⁺/(S⁺+S⁻).
            let denom = (mf.s_pos + mf.s_neg).powi(2);
            let d_s_pos = mf.s_neg / denom;
            let d_s_neg = -mf.s_pos / denom;

            // Through raw(label) = exp(mean over tokens of logp).
            let mut dlogp = Array1::<f64>::zeros(v);
            for (raws, d_s) in [(&mf.pos_raws, d_s_pos), (&mf.neg_raws, d_s_neg)] {
                for (ids, raw) in raws.iter() {
                    let per_token = d_s * raw / ids.len() as f64;
                    for &id in ids {
                        dlogp[id] += per_token;
                    }
                }
            }

            // log_softmax backward: ds = dlogp − softmax(s)·Σ dlogp.
            let total: f64 = dlogp.sum();
            let ds = &dlogp - &(&mf.softmax_s * total);

            // Readout and tanh.
            let du = self.params.w_out.dot(&ds);
            let ones_minus_u2 = mf.u.mapv(|x| 1.0 - x * x);
            let dpre = &du * &ones_minus_u2;

            // u = tanh(z[a] + ctx): both branches receive dpre.
            {
                let mut row = dz.row_mut(mf.position);
                row += &dpre;
            }
            let dctx = dpre;

            // ctx = attnᵀ·V.
            let dattn = pass.vmat.dot(&dctx);
            for j in 0..n {
                let mut row = dvmat.row_mut(j);
                row.scaled_add(mf.attn[j], &dctx);
            }

            // softmax backward over attention logits.
            let adot = mf.attn.dot(&dattn);
            let dlogits = &mf.attn * &(&dattn - adot);

            // logits = K·q·scale.
            let dq = pass.kmat.t().dot(&dlogits) * scale;
            for j in 0..n {
                let mut row = dkmat.row_mut(j);
                row.scaled_add(dlogits[j] * scale, &mf.q);
            }

            // q = z[a]·Wq.
            let dza = self.params.wq.dot(&dq);
            let mut row = dz.row_mut(mf.position);
            row += &dza;
        }

        // K = z·Wk and V = z·Wv push back into the sequence.
        dz += &dkmat.dot(&self.params.wk.t());
        dz += &dvmat.dot(&self.params.wv.t());

        Ok(dz.slice(s![0..pass.k_eff, ..]).mapv(|g| g * upstream))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenWindow;
    use crate::ontology::{build_verbalizer, default_negatives, parse_ontology, Aspect, Ontology};
    use crate::prefix::{init_store, PrefixBlock};
    use crate::prompt::{compose_prompt, generic_prompt, ensemble_assemble};
    use crate::tokenize::WhitespaceTokenizer;
    use rand::Rng;

    fn onto() -> Ontology {
        parse_ontology(
            "anxiety\tsymptom\ninsomnia\tsymptom\ndivorce\tlife_event\nabilify\ttreatment\n",
            "depression",
        )
        .unwrap()
    }

    fn window(text: &str) -> TokenWindow {
        TokenWindow {
            tokens: text.split_whitespace().map(str::to_owned).collect(),
            ordinal: 0,
            source_user: "u1".into(),
        }
    }

    fn verbalizers(o: &Ontology) -> Vec<Verbalizer> {
        Aspect::ALL
            .iter()
            .map(|a| build_verbalizer(o, *a, &default_negatives()).unwrap())
            .collect()
    }

    fn training_texts(o: &Ontology) -> Vec<String> {
        let mut texts = vec![
            "i feel anxiety and insomnia since my divorce".to_owned(),
            "started abilify last week feeling hopeful".to_owned(),
            "a quiet ordinary day with coffee and books".to_owned(),
        ];
        for w in [
            "is a of depression symptom. life event. treatment.; This text relates to depression:",
        ] {
            texts.push(w.to_owned());
        }
        for c in &o.concepts {
            texts.push(c.surface.clone());
        }
        for n in default_negatives() {
            texts.push(n);
        }
        texts
    }

    fn backend(o: &Ontology, k: usize, seed: u64) -> TinyBackend {
        let texts = training_texts(o);
        TinyBackend::from_texts(texts.iter().map(String::as_str), k, seed).unwrap()
    }

    fn prompt_for(
        text: &str,
        o: &Ontology,
        backend: &TinyBackend,
        seed: u64,
    ) -> EnsembledPrompt {
        let composed = compose_prompt(&window(text), "depression", o, &WhitespaceTokenizer).unwrap();
        let store = init_store(
            &["u1".to_string()],
            backend.k(),
            8,
            BlockShape::new(backend.k(), HIDDEN_WIDTH),
            seed,
        )
        .unwrap();
        ensemble_assemble(composed, &store, false).unwrap()
    }

    #[test]
    fn initialization_is_deterministic_in_the_seed() {
        let o = onto();
        let a = backend(&o, 4, 11);
        let b = backend(&o, 4, 11);
        let c = backend(&o, 4, 12);
        assert_eq!(a.params_hash(), b.params_hash());
        assert_ne!(a.params_hash(), c.params_hash());
    }

    #[test]
    fn scores_are_probabilities_and_repeatable() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let p = prompt_for("i feel anxiety and insomnia since my divorce", &o, &be, 5);
        let s1 = be.score(&p, &verbalizers(&o)).unwrap();
        let s2 = be.score(&p, &verbalizers(&o)).unwrap();
        assert_eq!(s1.probs.len(), 3);
        for ((_, a), (_, b)) in s1.probs.iter().zip(&s2.probs) {
            assert_eq!(a, b);
            assert!(*a > 0.0 && *a < 1.0);
        }
    }

    #[test]
    fn bare_prompts_and_generic_masks_are_scorable() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let composed =
            compose_prompt(&window("just a day"), "depression", &o, &WhitespaceTokenizer).unwrap();
        let bare = EnsembledPrompt::bare(composed);
        assert_eq!(be.score(&bare, &verbalizers(&o)).unwrap().probs.len(), 3);

        // The generic template ends in `[MASK].` — the mask is still found.
        let generic =
            generic_prompt(&window("just a day"), "depression", &WhitespaceTokenizer).unwrap();
        let scores = be
            .score(
                &EnsembledPrompt::bare(generic),
                &[crate::ontology::generic_verbalizer()],
            )
            .unwrap();
        assert_eq!(scores.probs.len(), 1);
    }

    #[test]
    fn stray_mask_tokens_in_the_window_are_rejected() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let composed = compose_prompt(
            &window("text with a stray [MASK] token"),
            "depression",
            &o,
            &WhitespaceTokenizer,
        )
        .unwrap();
        let err = be
            .score(&EnsembledPrompt::bare(composed), &verbalizers(&o))
            .unwrap_err();
        assert_eq!(err.code(), "E-MASKCOUNT");
    }

    #[test]
    fn prefix_shape_is_enforced_and_gradient_needs_a_prefix() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let composed =
            compose_prompt(&window("w"), "depression", &o, &WhitespaceTokenizer).unwrap();

        let wrong = EnsembledPrompt {
            composed: composed.clone(),
            prefix: Some(PrefixBlock {
                states: Array2::zeros((2, HIDDEN_WIDTH)),
                owner: "u1".into(),
            }),
        };
        assert_eq!(
            be.score(&wrong, &verbalizers(&o)).unwrap_err().code(),
            "E-SHAPE"
        );

        let bare = EnsembledPrompt::bare(composed);
        assert_eq!(
            be.grad_prefix(&bare, &verbalizers(&o), 1.0).unwrap_err().code(),
            "E-NOPREFIX"
        );
    }

    #[test]
    fn zero_upstream_gives_a_zero_gradient_block() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let p = prompt_for("anxiety day", &o, &be, 5);
        let g = be.grad_prefix(&p, &verbalizers(&o), 0.0).unwrap();
        assert_eq!(g.dim(), (4, HIDDEN_WIDTH));
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn different_prefix_blocks_change_the_score() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let p1 = prompt_for("a quiet ordinary day", &o, &be, 5);
        let mut p2 = p1.clone();
        p2.prefix.as_mut().unwrap().states += 0.5;
        let s1 = be.score(&p1, &verbalizers(&o)).unwrap().mask_sum();
        let s2 = be.score(&p2, &verbalizers(&o)).unwrap().mask_sum();
        assert_ne!(s1, s2);
    }

    #[test]
    fn tokens_present_in_the_window_raise_their_own_fill_probability() {
        // Copy bias of the tied readout: the symptom mask scores higher when
        // the window mentions symptom concepts than when it does not.
        let o = onto();
        let be = backend(&o, 4, 11);
        let verbs = verbalizers(&o);
        let with = be
            .score(
                &prompt_for("anxiety insomnia anxiety insomnia anxiety insomnia", &o, &be, 5),
                &verbs,
            )
            .unwrap();
        let without = be
            .score(
                &prompt_for("coffee books coffee books coffee books", &o, &be, 5),
                &verbs,
            )
            .unwrap();
        assert!(
            with.probs[0].1 > without.probs[0].1,
            "symptom mask: {} vs {}",
            with.probs[0].1,
            without.probs[0].1
        );
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let verbs = verbalizers(&o);
        let base = prompt_for("i feel anxiety and insomnia since my divorce", &o, &be, 5);

        let analytic = be.grad_prefix(&base, &verbs, 1.0).unwrap();
        let mut rng = derive_rng(99, "fd-probe", 0);
        let step = 1e-4;
        for _ in 0..50 {
            let r = rng.random_range(0..analytic.nrows());
            let c = rng.random_range(0..analytic.ncols());
            let mut plus = base.clone();
            plus.prefix.as_mut().unwrap().states[(r, c)] += step;
            let mut minus = base.clone();
            minus.prefix.as_mut().unwrap().states[(r, c)] -= step;
            let f_plus = be.score(&plus, &verbs).unwrap().mask_sum();
            let f_minus = be.score(&minus, &verbs).unwrap().mask_sum();
            let fd = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[(r, c)];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(rel <= 1e-3, "({r},{c}): analytic {a} vs fd {fd}, rel {rel}");
        }
    }

    #[test]
    fn gradient_scales_linearly_with_upstream() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let verbs = verbalizers(&o);
        let p = prompt_for("anxiety and divorce", &o, &be, 5);
        let g1 = be.grad_prefix(&p, &verbs, 1.0).unwrap();
        let g3 = be.grad_prefix(&p, &verbs, -3.0).unwrap();
        for (a, b) in g1.iter().zip(g3.iter()) {
            assert!((b - (-3.0) * a).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_vocabulary_tokens_fall_back_to_unk() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let p = prompt_for("zzzunknown wordsxyz notinvocab", &o, &be, 5);
        let s = be.score(&p, &verbalizers(&o)).unwrap();
        assert!(s.probs.iter().all(|(_, p)| p.is_finite()));
    }

    #[test]
    fn parameters_round_trip_through_disk_bitwise() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.json");
        be.save(&path).unwrap();
        let loaded = TinyBackend::load(&path).unwrap();
        assert_eq!(be.params_hash(), loaded.params_hash());
        let p = prompt_for("anxiety", &o, &be, 5);
        assert_eq!(
            be.score(&p, &verbalizers(&o)).unwrap().mask_sum(),
            loaded.score(&p, &verbalizers(&o)).unwrap().mask_sum()
        );
        loaded.save(&dir.path().join("tiny2.json")).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("tiny2.json")).unwrap()
        );
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let o = onto();
        let be = backend(&o, 4, 11);
        let mut broken = be.params().clone();
        broken.vocab.push("zzz-extra".into());
        assert!(TinyBackend::new(broken).is_err());
    }
}
