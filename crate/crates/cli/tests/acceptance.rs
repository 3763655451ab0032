//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values. Criteria 5, 6 and 10 share one trained stack (built
//! on first use); run with `--test-threads=1 --nocapture` to see the lines
//! in order.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gencad_cli::synth::{synth_corpus, Difficulty, SynthOptions};
use gencad_core::geom::{execute, extract_mesh, is_valid, sample_surface, volume_estimate};
use gencad_core::img::{render_isometric, GrayImage};
use gencad_core::lang::{
    decode_sequence, dequantize, encode_sequence, quantize, validate, CadCommand, CadSequence,
    CommandType, SeqMatrix, SlotKind, SLOT_KINDS,
};
use gencad_core::metrics::chamfer::{chamfer, KdTree3};
use gencad_core::metrics::fid::{fid, sqrtm_psd, SymMat};
use gencad_core::metrics::gen::{cov, jsd, mmd, JSD_GRID};
use gencad_core::metrics::recon::{cmd_accuracy, param_accuracy};
use gencad_models::ccip::{ccip_loss, CcipConfig, CcipModel};
use gencad_models::cdp::{gaussian, CdpConfig, CdpModel};
use gencad_models::csr::{CsrConfig, CsrModel};
use gencad_models::generate::Generator;
use gencad_models::retrieval::eval_protocol;
use gencad_models::train::{
    encode_images_frozen, train_ccip, train_cdp, train_csr, CcipTrainOptions, CdpTrainOptions,
    CsrTrainOptions,
};
use gencad_nn::checkpoint::params_fingerprint;
use gencad_nn::tensor::Tensor;

// re-exported geometry renderer lives in img
use gencad_core::img::preprocess_for_encoder;

const STACK_SEED: u64 = 11;
const STACK_N: usize = 24;

/// Corpus + trained CSR/CCIP/CDP shared across criteria 5, 6, 7 and 10.
struct TrainedStack {
    matrices: Vec<SeqMatrix>,
    csr_result: gencad_models::train::CsrTrainResult,
    ccip_result: gencad_models::train::CcipTrainResult,
    ccip_pairs: usize,
    cad_encoder_fingerprint_unchanged: bool,
    protocol_at_10: f64,
    generator: Generator<f32>,
    test_images: Vec<GrayImage>,
}

fn render_model(seq: &CadSequence) -> GrayImage {
    let solid = execute(seq).expect("corpus model executes");
    render_isometric(&solid, 448).expect("corpus model renders")
}

fn stack() -> &'static TrainedStack {
    static STACK: OnceLock<TrainedStack> = OnceLock::new();
    STACK.get_or_init(|| {
        // 64 training programs, short padding so the overfit run is fast.
        let corpus = synth_corpus(&SynthOptions {
            count: 72,
            seed: STACK_SEED,
            difficulty: Difficulty::Easy,
            padded_len: STACK_N,
            max_commands: STACK_N,
        });
        let train_seqs = &corpus[..64];
        let matrices: Vec<SeqMatrix> =
            train_seqs.iter().map(|s| encode_sequence(s).unwrap()).collect();

        // Criterion 5 config: d_z = 64, 2 encoder / 2 decoder layers.
        let csr_cfg = CsrConfig { n: STACK_N, seed: STACK_SEED, ..CsrConfig::desk_scale() };
        let mut csr = CsrModel::new(csr_cfg);
        let csr_result = train_csr(
            &mut csr,
            &matrices,
            &CsrTrainOptions {
                max_steps: 5000,
                batch_size: 64,
                warmup_steps: 200,
                target_cmd_acc: 0.99,
                target_param_acc: 0.96,
                seed: STACK_SEED,
                ..CsrTrainOptions::default()
            },
        )
        .expect("csr training runs");

        // Criterion 6: exactly 32 CAD-image pairs.
        let pair_mats: Vec<SeqMatrix> = matrices[..32].to_vec();
        let pair_images: Vec<GrayImage> = train_seqs[..32].iter().map(render_model).collect();
        let image_tensor = {
            let mut t = Tensor::zeros(&[32, 1, 256, 256]);
            for (i, img) in pair_images.iter().enumerate() {
                let px = preprocess_for_encoder(img).unwrap();
                t.data_mut()[i * 256 * 256..(i + 1) * 256 * 256].copy_from_slice(&px);
            }
            t
        };
        let ccip_cfg = CcipConfig { d_z: 64, seed: STACK_SEED, ..CcipConfig::desk_scale() };
        let mut ccip = CcipModel::new(ccip_cfg, CsrModel::new(csr.config.clone())).unwrap();
        // Share the trained encoder weights.
        copy_params(&mut csr, &mut ccip.cad_encoder);
        let fp_before = params_fingerprint(&mut ccip.cad_encoder);
        let ccip_result = train_ccip(
            &mut ccip,
            &pair_mats,
            &image_tensor,
            &CcipTrainOptions {
                max_steps: 1200,
                batch_size: 32,
                target_top1: 1.0,
                target_loss: 0.1,
                seed: STACK_SEED,
                ..CcipTrainOptions::default()
            },
        )
        .expect("ccip training runs");
        let fp_after = params_fingerprint(&mut ccip.cad_encoder);

        // Diffusion prior over the 32 pairs' latents.
        let z0 = csr.encode_frozen(&pair_mats).unwrap();
        let img_latents = encode_images_frozen(&ccip, &image_tensor);
        let protocol_at_10 = eval_protocol(&z0, &img_latents, 10, 100, 7).unwrap().mean;
        let (cond, _) = gencad_models::ccip::l2_normalize_rows(&img_latents);
        let cdp_cfg = CdpConfig { d_z: 64, seed: STACK_SEED, ..CdpConfig::desk_scale() };
        let mut cdp = CdpModel::new(cdp_cfg);
        train_cdp(
            &mut cdp,
            &z0,
            Some(&cond),
            &CdpTrainOptions { max_steps: 3000, batch_size: 32, seed: STACK_SEED, ..CdpTrainOptions::default() },
        )
        .expect("cdp training runs");

        // Eight held-out test images (corpus tail, unseen by CCIP).
        let test_images: Vec<GrayImage> = corpus[64..72].iter().map(render_model).collect();

        TrainedStack {
            matrices,
            csr_result,
            ccip_result,
            ccip_pairs: pair_mats.len(),
            cad_encoder_fingerprint_unchanged: fp_before == fp_after,
            protocol_at_10,
            generator: Generator { csr, image_encoder: ccip.image_encoder, cdp },
            test_images,
        }
    })
}

/// Copy parameters between two identically-configured models.
fn copy_params(src: &mut CsrModel<f32>, dst: &mut CsrModel<f32>) {
    use gencad_nn::tensor::Params;
    let mut values = std::collections::HashMap::new();
    src.visit_params("model", &mut |name, p| {
        values.insert(name.to_string(), p.value.clone());
    });
    dst.visit_params("model", &mut |name, p| {
        p.value = values.remove(name).expect("matching parameter sets").clone();
    });
}

// ---------------------------------------------------------------------
// Criterion 1: quantization roundtrip, exhaustive.
// ---------------------------------------------------------------------
#[test]
fn acceptance_01_quantization_roundtrip() {
    let start = std::time::Instant::now();
    for slot in 0..16 {
        if let SlotKind::Continuous { lo, hi } = SLOT_KINDS[slot] {
            let half_step = (hi - lo) / 510.0;
            for level in 0u8..=255 {
                let v: f64 = dequantize(level, lo, hi).unwrap();
                assert_eq!(quantize(v, lo, hi).unwrap(), level, "identity at slot {slot}");
            }
            // Dense value sweep for the roundtrip error bound.
            for k in 0..=2000 {
                let v = lo + (hi - lo) * k as f64 / 2000.0;
                let rt: f64 = dequantize(quantize(v, lo, hi).unwrap(), lo, hi).unwrap();
                assert!((rt - v).abs() <= half_step + 1e-12, "slot {slot} value {v}");
            }
        }
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}, budget 1 s");
    println!("ACCEPTANCE 1 PASS: quantization identity + half-step bound, {dt:?}");
}

// ---------------------------------------------------------------------
// Criterion 2: grammar/kernel agreement over 1000 programs + corruptions.
// ---------------------------------------------------------------------
#[test]
fn acceptance_02_grammar_kernel_agreement() {
    let start = std::time::Instant::now();
    let corpus = synth_corpus(&SynthOptions {
        count: 1000,
        seed: 23,
        difficulty: Difficulty::Medium,
        ..SynthOptions::default()
    });
    for (i, seq) in corpus.iter().enumerate() {
        assert!(validate(seq).is_ok(), "corpus program {i} fails validation");
        assert!(execute(seq).is_ok(), "corpus program {i} fails execution");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut kernel_failures = 0usize;
    for k in 0..1000 {
        let seq = &corpus[k % corpus.len()];
        let mut corrupted = seq.clone();
        let pos = rng.random_range(0..corrupted.commands.len());
        corrupted.commands[pos] = random_command(&mut rng);
        if execute(&corrupted).is_err() {
            kernel_failures += 1;
            assert!(
                !validate(&corrupted).is_ok(),
                "kernel rejected corruption {k} at {pos} but the validator accepted it"
            );
        }
    }
    let dt = start.elapsed();
    assert!(kernel_failures > 100, "corruptions too benign ({kernel_failures} failures)");
    assert!(dt.as_secs_f64() < 60.0, "took {dt:?}, budget 60 s");
    println!(
        "ACCEPTANCE 2 PASS: 1000/1000 valid programs execute; {kernel_failures} kernel failures all validator-rejected, {dt:?}"
    );
}

fn random_command(rng: &mut ChaCha8Rng) -> CadCommand {
    let uniform = |rng: &mut ChaCha8Rng, slot: usize| match SLOT_KINDS[slot] {
        SlotKind::Continuous { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        SlotKind::Discrete { cardinality } => rng.random_range(0..cardinality) as f64,
    };
    match rng.random_range(0..6) {
        0 => CadCommand::sol(),
        1 => CadCommand::line(uniform(rng, 0), uniform(rng, 1)),
        2 => CadCommand::arc(
            uniform(rng, 0),
            uniform(rng, 1),
            uniform(rng, 2),
            if rng.random::<bool>() {
                gencad_core::lang::ArcDirection::Ccw
            } else {
                gencad_core::lang::ArcDirection::Cw
            },
        ),
        3 => CadCommand::circle(uniform(rng, 0), uniform(rng, 1), uniform(rng, 4)),
        4 => CadCommand::extrude(
            uniform(rng, 5),
            uniform(rng, 6),
            uniform(rng, 7),
            [uniform(rng, 8), uniform(rng, 9), uniform(rng, 10)],
            uniform(rng, 11),
            uniform(rng, 12),
            uniform(rng, 13),
            gencad_core::lang::BooleanOp::from_code(rng.random_range(0..4)).unwrap(),
            gencad_core::lang::Sidedness::from_code(rng.random_range(0..2)).unwrap(),
        ),
        _ => CadCommand::eos(),
    }
}

// ---------------------------------------------------------------------
// Criterion 3: geometry oracles.
// ---------------------------------------------------------------------
#[test]
fn acceptance_03_geometry_oracles() {
    let start = std::time::Instant::now();
    let cube = unit_cube();
    let est = volume_estimate(&cube, 1_000_000, 3);
    assert!(
        (est.volume - 1.0).abs() <= 3.0 * est.std_error,
        "cube volume {} ± {}",
        est.volume,
        est.std_error
    );
    let cyl = cylinder_r05_h1();
    let est_c = volume_estimate(&cyl, 1_000_000, 4);
    let want = std::f64::consts::PI / 4.0;
    assert!(
        (est_c.volume - want).abs() <= 3.0 * est_c.std_error,
        "cylinder volume {} vs {want}",
        est_c.volume
    );

    let mesh = extract_mesh(&cube, 64);
    let area = mesh.area();
    assert!((area - 6.0).abs() / 6.0 < 0.03, "cube mesh area {area}");

    // Sign agreement: ten corpus shapes, 10^4 points each, against the
    // independent membership oracle.
    let shapes = synth_corpus(&SynthOptions {
        count: 10,
        seed: 41,
        difficulty: Difficulty::Medium,
        ..SynthOptions::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for (i, seq) in shapes.iter().enumerate() {
        let solid = execute(seq).unwrap();
        let d = solid.bounds.max - solid.bounds.min;
        let mut mismatch = 0usize;
        for _ in 0..10_000 {
            let p = gencad_core::geom::Vec3::new(
                solid.bounds.min.x + d.x * rng.random::<f64>(),
                solid.bounds.min.y + d.y * rng.random::<f64>(),
                solid.bounds.min.z + d.z * rng.random::<f64>(),
            );
            let sd = solid.sdf(p);
            if sd.abs() < 1e-9 {
                continue;
            }
            if (sd < 0.0) != membership(&solid.root, p) {
                mismatch += 1;
            }
        }
        assert_eq!(mismatch, 0, "shape {i}: {mismatch} sign mismatches");
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 300.0, "took {dt:?}, budget 5 min");
    println!("ACCEPTANCE 3 PASS: MC volumes in 3 sigma, mesh area within 3%, 0 sign mismatches on 10 shapes x 10^4 points, {dt:?}");
}

fn unit_cube() -> gencad_core::geom::SolidModel {
    let seq = CadSequence::new(vec![
        CadCommand::sol(),
        CadCommand::line(1.0, 0.0),
        CadCommand::line(1.0, 1.0),
        CadCommand::line(0.0, 1.0),
        CadCommand::line(0.0, 0.0),
        CadCommand::extrude(
            0.0,
            0.0,
            0.0,
            [0.0, 0.0, 0.0],
            1.0,
            1.0,
            0.0,
            gencad_core::lang::BooleanOp::New,
            gencad_core::lang::Sidedness::One,
        ),
        CadCommand::eos(),
    ]);
    execute(&seq).unwrap()
}

fn cylinder_r05_h1() -> gencad_core::geom::SolidModel {
    let seq = CadSequence::new(vec![
        CadCommand::sol(),
        CadCommand::circle(0.0, 0.0, 0.5),
        CadCommand::extrude(
            0.0,
            0.0,
            0.0,
            [0.0, 0.0, 0.0],
            1.0,
            1.0,
            0.0,
            gencad_core::lang::BooleanOp::New,
            gencad_core::lang::Sidedness::One,
        ),
        CadCommand::eos(),
    ]);
    execute(&seq).unwrap()
}

/// Independent membership: even-odd along -y in the sketch plane + slab
/// containment, folded through the CSG tree with boolean logic.
fn membership(node: &gencad_core::geom::CsgNode, p: gencad_core::geom::Vec3) -> bool {
    use gencad_core::geom::{CsgNode, Segment, Vec2};
    match node {
        CsgNode::Join(a, b) => membership(a, p) || membership(b, p),
        CsgNode::Cut(a, b) => membership(a, p) && !membership(b, p),
        CsgNode::Intersect(a, b) => membership(a, p) && membership(b, p),
        CsgNode::Leaf(e) => {
            let (u, v, w) = e.plane.to_sketch(p);
            let (lo, hi) =
                gencad_core::lang::extrude_slab(e.spec.e1, e.spec.e2, e.spec.sided);
            if w < lo || w > hi {
                return false;
            }
            let q = Vec2::new(u, v);
            let mut crossings = 0usize;
            for seg in e.profile.loops.iter().flatten() {
                match seg {
                    Segment::Line { a, b } => {
                        if (a.x > q.x) != (b.x > q.x) {
                            let t = (q.x - a.x) / (b.x - a.x);
                            if a.y + t * (b.y - a.y) < q.y {
                                crossings += 1;
                            }
                        }
                    }
                    Segment::Circle { center, radius } => {
                        let dx = q.x - center.x;
                        let disc = radius * radius - dx * dx;
                        if disc > 0.0 {
                            for y in [center.y - disc.sqrt(), center.y + disc.sqrt()] {
                                if y < q.y {
                                    crossings += 1;
                                }
                            }
                        }
                    }
                    Segment::Arc { center, radius, start_angle, sweep, ccw, .. } => {
                        let dx = q.x - center.x;
                        let disc = radius * radius - dx * dx;
                        if disc > 0.0 {
                            for y in [center.y - disc.sqrt(), center.y + disc.sqrt()] {
                                if y >= q.y {
                                    continue;
                                }
                                let ang = (y - center.y).atan2(q.x - center.x);
                                let raw = if *ccw { ang - start_angle } else { start_angle - ang };
                                let mut rel = raw % std::f64::consts::TAU;
                                if rel < 0.0 {
                                    rel += std::f64::consts::TAU;
                                }
                                if rel <= *sweep {
                                    crossings += 1;
                                }
                            }
                        }
                    }
                }
            }
            crossings % 2 == 1
        }
    }
}

// ---------------------------------------------------------------------
// Criterion 4: gradient verification of layers and composed models.
// ---------------------------------------------------------------------
#[test]
fn acceptance_04_gradient_verification() {
    use gencad_nn::finite_diff_check;
    use gencad_nn::layers::{Linear, Mode};
    use gencad_nn::loss::mse;
    use gencad_nn::tensor::{Param, Params};

    let start = std::time::Instant::now();

    // Linear layer at the strict threshold.
    struct WithInput<L> {
        input: Param<f64>,
        layer: L,
    }
    impl<L: Params<f64>> Params<f64> for WithInput<L> {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f(&format!("{prefix}.input"), &mut self.input);
            self.layer.visit_params(&format!("{prefix}.layer"), f);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x64 = |shape: &[usize], rng: &mut ChaCha8Rng| -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
    };

    let mut lin = WithInput { input: Param::new(x64(&[3, 4], &mut rng)), layer: Linear::new(4, 3, &mut rng) };
    let target = x64(&[3, 3], &mut rng);
    let y = lin.layer.forward(&lin.input.value);
    let (_, dy) = mse(&y, &target);
    lin.input.grad = lin.layer.backward(&dy);
    let (err_lin, at) = finite_diff_check(
        &mut lin,
        |m| mse(&m.layer.forward_frozen(&m.input.value), &target).0,
        1e-5,
    );
    assert!(err_lin < 1e-7, "linear worst {err_lin} at {at}");

    // Composed sequence autoencoder at f64, tiny dims, full loss.
    let cfg = CsrConfig {
        d_z: 8,
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        ffn_dim: 16,
        dropout: 0.0,
        n: 6,
        slot_embed_dim: 2,
        beta: 2.0,
        seed: 5,
        ..CsrConfig::desk_scale()
    };
    let mut csr64 = CsrModel::<f64>::new(cfg);
    let seq = CadSequence::with_padded_len(
        vec![
            CadCommand::sol(),
            CadCommand::line(0.6, 0.0),
            CadCommand::line(0.6, 0.6),
            CadCommand::line(0.0, 0.6),
            CadCommand::line(0.0, 0.0),
        ],
        6,
    );
    let mats = vec![encode_sequence(&seq).unwrap()];
    let _ = csr64.loss_and_backward(&mats, Mode::Eval, true).unwrap();
    let (err_csr, at_csr) = finite_diff_check(
        &mut csr64,
        |m| m.loss_and_backward(&mats, Mode::Eval, false).unwrap(),
        1e-5,
    );
    assert!(err_csr < 1e-4, "autoencoder worst {err_csr} at {at_csr}");

    // Composed image encoder (conv/bn/pool stack) at f64.
    let icfg = CcipConfig {
        d_z: 4,
        widths: [2, 2, 4, 4],
        blocks_per_stage: 1,
        dropout: 0.0,
        temperature: 0.07,
        input_size: 64,
        seed: 6,
    };
    let mut enc = gencad_models::ccip::ImageEncoder::<f64>::new(icfg);
    let img_in = x64(&[2, 1, 64, 64], &mut rng);
    let target_lat = x64(&[2, 4], &mut rng);
    let z = enc.forward(&img_in, Mode::Train);
    let (_, dz) = mse(&z, &target_lat);
    enc.backward(&dz);
    let (err_enc, at_enc) = finite_diff_check(
        &mut enc,
        |m| mse(&m.forward(&img_in, Mode::Train), &target_lat).0,
        1e-5,
    );
    assert!(err_enc < 1e-4, "image encoder worst {err_enc} at {at_enc}");

    // Contrastive loss w.r.t. image latents.
    struct Holder {
        img: Param<f64>,
    }
    impl Params<f64> for Holder {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f(&format!("{prefix}.img"), &mut self.img);
        }
    }
    let cadl = x64(&[4, 6], &mut rng);
    let mut holder = Holder { img: Param::new(x64(&[4, 6], &mut rng)) };
    let (_, dimg) = ccip_loss(&cadl, &holder.img.value, 0.07).unwrap();
    holder.img.grad = dimg;
    let (err_nce, at_nce) =
        finite_diff_check(&mut holder, |h| ccip_loss(&cadl, &h.img.value, 0.07).unwrap().0, 1e-6);
    assert!(err_nce < 1e-4, "contrastive loss worst {err_nce} at {at_nce}");

    // Denoiser (residual MLP) through a full diffusion training step's loss.
    let dcfg = CdpConfig {
        d_z: 4,
        width: 8,
        blocks: 2,
        dropout: 0.0,
        timesteps: 10,
        ..CdpConfig::desk_scale()
    };
    let mut cdp64 = CdpModel::<f64>::new(dcfg);
    let z0 = x64(&[3, 4], &mut rng);
    let eps = x64(&[3, 4], &mut rng);
    // Deterministic diffusion loss at a fixed timestep and noise draw.
    let diff_loss = |m: &mut CdpModel<f64>| -> f64 {
        let zt = m.q_sample(&z0, 5, &eps).unwrap();
        let pred = m.denoise_frozen(&zt, None, 5).unwrap();
        mse(&pred, &eps).0
    };
    {
        let zt = cdp64.q_sample(&z0, 5, &eps).unwrap();
        let pred = cdp64.denoise(&zt, None, 5).unwrap();
        let (_, dpred) = mse(&pred, &eps);
        cdp64.denoise_backward(&dpred);
    }
    let (err_cdp, at_cdp) = finite_diff_check(&mut cdp64, diff_loss, 1e-5);
    assert!(err_cdp < 1e-4, "denoiser worst {err_cdp} at {at_cdp}");

    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 300.0, "took {dt:?}, budget 5 min");
    println!(
        "ACCEPTANCE 4 PASS: finite differences — linear {err_lin:.2e}, autoencoder {err_csr:.2e}, image encoder {err_enc:.2e}, contrastive {err_nce:.2e}, denoiser {err_cdp:.2e}, {dt:?}"
    );
}

// ---------------------------------------------------------------------
// Criterion 5: sequence autoencoder overfit.
// ---------------------------------------------------------------------
#[test]
fn acceptance_05_csr_overfit() {
    let start = std::time::Instant::now();
    let s = stack();
    assert!(s.csr_result.steps <= 5000, "{} steps exceed the budget", s.csr_result.steps);
    assert!(s.csr_result.cmd_acc >= 0.99, "cmd accuracy {}", s.csr_result.cmd_acc);
    assert!(s.csr_result.param_acc >= 0.95, "param accuracy {}", s.csr_result.param_acc);
    println!(
        "ACCEPTANCE 5 PASS: overfit in {} steps, cmd {:.4}, param {:.4} (eta=3), {:?} elapsed here",
        s.csr_result.steps,
        s.csr_result.cmd_acc,
        s.csr_result.param_acc,
        start.elapsed()
    );
}

// ---------------------------------------------------------------------
// Criterion 6: contrastive overfit on 32 pairs.
// ---------------------------------------------------------------------
#[test]
fn acceptance_06_ccip_overfit() {
    let s = stack();
    assert_eq!(s.ccip_pairs, 32);
    assert!(s.cad_encoder_fingerprint_unchanged, "frozen CAD encoder changed");
    assert!(s.ccip_result.loss < 0.1, "contrastive loss {}", s.ccip_result.loss);
    assert!((s.ccip_result.top1 - 1.0).abs() < 1e-12, "in-batch top1 {}", s.ccip_result.top1);
    assert_eq!(s.protocol_at_10, 1.0, "batch protocol at n_b = 10");
    println!(
        "ACCEPTANCE 6 PASS: 32-pair overfit, loss {:.4}, in-batch top1 100%, protocol@10 100%, encoder frozen",
        s.ccip_result.loss
    );
}

// ---------------------------------------------------------------------
// Criterion 7: diffusion prior on toy tasks.
// ---------------------------------------------------------------------
#[test]
fn acceptance_07_cdp_toy() {
    let start = std::time::Instant::now();
    // Two condition classes with distinct latent means.
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let n_per = 256;
    let mean_a = [0.6f32, -0.4];
    let mean_b = [-0.5f32, 0.5];
    let mut z0 = Tensor::zeros(&[2 * n_per, 2]);
    let mut cond = Tensor::zeros(&[2 * n_per, 2]);
    for i in 0..2 * n_per {
        let (m, c) = if i < n_per { (mean_a, [1.0, 0.0]) } else { (mean_b, [0.0, 1.0]) };
        for k in 0..2 {
            z0.row_mut(i)[k] = m[k] + 0.05 * (rng.random::<f32>() - 0.5);
            cond.row_mut(i)[k] = c[k];
        }
    }
    let cfg = CdpConfig { d_z: 2, width: 64, blocks: 4, dropout: 0.0, seed: 63, ..CdpConfig::desk_scale() };
    let mut model = CdpModel::new(cfg);
    train_cdp(
        &mut model,
        &z0,
        Some(&cond),
        &CdpTrainOptions { max_steps: 3000, batch_size: 128, seed: 65, ..CdpTrainOptions::default() },
    )
    .unwrap();
    for (label, target) in [("A", mean_a), ("B", mean_b)] {
        let c = if label == "A" { [1.0f32, 0.0] } else { [0.0, 1.0] };
        let mut cbatch = Tensor::zeros(&[200, 2]);
        for r in 0..200 {
            cbatch.row_mut(r).copy_from_slice(&c);
        }
        let samples = model.sample(200, Some(&cbatch), 67).unwrap();
        for k in 0..2 {
            let mean: f32 = (0..200).map(|r| samples.row(r)[k]).sum::<f32>() / 200.0;
            assert!(
                (mean - target[k]).abs() < 0.1,
                "class {label} component {k}: sampled mean {mean} vs {}",
                target[k]
            );
        }
    }

    // Unconditional bimodal toy: histogram JSD below 0.05.
    let mut z_bi = Tensor::zeros(&[512, 2]);
    for i in 0..512 {
        let m = if i % 2 == 0 { 0.7f32 } else { -0.7 };
        z_bi.row_mut(i)[0] = m + 0.08 * (rng.random::<f32>() - 0.5);
        z_bi.row_mut(i)[1] = 0.08 * (rng.random::<f32>() - 0.5);
    }
    let cfg_u = CdpConfig {
        d_z: 2,
        width: 64,
        blocks: 4,
        dropout: 0.0,
        conditional: false,
        seed: 69,
        ..CdpConfig::desk_scale()
    };
    let mut uncond = CdpModel::new(cfg_u);
    train_cdp(
        &mut uncond,
        &z_bi,
        None,
        &CdpTrainOptions { max_steps: 3000, batch_size: 128, seed: 71, ..CdpTrainOptions::default() },
    )
    .unwrap();
    let samples = uncond.sample(2000, None, 73).unwrap();
    let hist = |values: &[f32]| -> Vec<f64> {
        let mut h = vec![0.0f64; 40];
        for &v in values {
            let bin = (((v as f64 + 2.0) / 4.0 * 40.0) as usize).min(39);
            h[bin] += 1.0 / values.len() as f64;
        }
        h
    };
    let truth: Vec<f32> = (0..2000).map(|i| z_bi.row(i % 512)[0]).collect();
    let sampled: Vec<f32> = (0..2000).map(|i| samples.row(i)[0]).collect();
    let (p, q) = (hist(&truth), hist(&sampled));
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let kl = |p: &[f64], m: &[f64]| -> f64 {
        p.iter().zip(m).map(|(&pi, &mi)| if pi > 0.0 { pi * (pi / mi).ln() } else { 0.0 }).sum()
    };
    let jsd_hist = 0.5 * kl(&p, &m) + 0.5 * kl(&q, &m);
    assert!(jsd_hist < 0.05, "bimodal histogram JSD {jsd_hist}");
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1800.0);
    println!(
        "ACCEPTANCE 7 PASS: class-conditional means within 0.1, bimodal JSD {jsd_hist:.4} < 0.05, {dt:?}"
    );
}

// ---------------------------------------------------------------------
// Criterion 8: metric oracles.
// ---------------------------------------------------------------------
#[test]
fn acceptance_08_metric_oracles() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let cloud = |rng: &mut ChaCha8Rng, n: usize, off: f64| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| [rng.random::<f64>() + off, rng.random::<f64>() + off, rng.random::<f64>() + off])
            .collect()
    };

    // Chamfer: k-d tree versus brute force on 100 random pairs.
    let brute = |x: &[[f64; 3]], y: &[[f64; 3]]| -> f64 {
        let min_sq = |p: &[f64; 3], s: &[[f64; 3]]| {
            s.iter()
                .map(|q| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        };
        x.iter().map(|p| min_sq(p, y)).sum::<f64>() / x.len() as f64
            + y.iter().map(|p| min_sq(p, x)).sum::<f64>() / y.len() as f64
    };
    let mut worst_rel = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(5..80);
        let m = rng.random_range(5..80);
        let x = cloud(&mut rng, n, 0.0);
        let y = cloud(&mut rng, m, 0.1);
        let fast = chamfer(&x, &y).unwrap();
        let slow = brute(&x, &y);
        worst_rel = worst_rel.max((fast - slow).abs() / slow.max(1e-300));
    }
    assert!(worst_rel <= 1e-9, "chamfer rel err {worst_rel}");
    // Also sanity: the tree answers exact nearest squared distances.
    let x = cloud(&mut rng, 64, 0.0);
    let tree = KdTree3::build(&x).unwrap();
    let q = [0.5f64, 0.5, 0.5];
    let brute_nn = x
        .iter()
        .map(|p| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(tree.nearest_sq(&q), brute_nn);

    // COV/MMD: fast path equals brute force exactly at 20 x 20.
    let s: Vec<Vec<[f64; 3]>> = (0..20).map(|i| cloud(&mut rng, 24, i as f64 * 0.01)).collect();
    let g: Vec<Vec<[f64; 3]>> = (0..20).map(|i| cloud(&mut rng, 24, 0.15 + i as f64 * 0.01)).collect();
    let mut matched = vec![false; s.len()];
    for x in &g {
        let best = (0..s.len())
            .min_by(|&a, &b| brute(x, &s[a]).partial_cmp(&brute(x, &s[b])).unwrap())
            .unwrap();
        matched[best] = true;
    }
    let cov_brute = matched.iter().filter(|&&m| m).count() as f64 / s.len() as f64;
    let mmd_brute = s
        .iter()
        .map(|y| g.iter().map(|x| brute(x, y)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / s.len() as f64;
    assert_eq!(cov(&s, &g).unwrap(), cov_brute);
    let mmd_fast = mmd(&s, &g).unwrap();
    assert!((mmd_fast - mmd_brute).abs() <= 1e-9 * mmd_brute.max(1.0));

    // JSD of disjoint supports is exactly ln 2.
    let a = vec![vec![[-0.9, -0.9, -0.9]; 50]];
    let b = vec![vec![[0.9, 0.9, 0.9]; 50]];
    assert_eq!(jsd(&a, &b, JSD_GRID).unwrap(), std::f64::consts::LN_2);

    // FID closed forms.
    let normal = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let sa: Vec<Vec<f64>> = (0..100_000).map(|_| vec![normal(&mut rng)]).collect();
    let sb: Vec<Vec<f64>> = (0..100_000).map(|_| vec![normal(&mut rng) + 1.0]).collect();
    let f = fid(&sa, &sb).unwrap();
    assert!((f.value - 1.0).abs() < 0.05, "1-D FID {}", f.value);
    let ident: Vec<Vec<f64>> =
        (0..500).map(|_| (0..6).map(|_| normal(&mut rng)).collect()).collect();
    let f0 = fid(&ident, &ident).unwrap();
    assert!(f0.value.abs() < 1e-6, "identical-set FID {}", f0.value);
    // Matrix square root oracle.
    let mut d = SymMat::zeros(2);
    d.set(0, 0, 4.0);
    d.set(1, 1, 9.0);
    let (root, _) = sqrtm_psd(&d, 1e-10);
    assert!((root.at(0, 0) - 2.0).abs() < 1e-9 && (root.at(1, 1) - 3.0).abs() < 1e-9);

    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 300.0, "took {dt:?}");
    println!("ACCEPTANCE 8 PASS: chamfer/COV/MMD oracles exact, JSD(disjoint)=ln2, FID 1-D {:.3} and identical {:.1e}, {dt:?}", f.value, f0.value);
}

// ---------------------------------------------------------------------
// Criterion 9: retrieval protocol baselines.
// ---------------------------------------------------------------------
#[test]
fn acceptance_09_retrieval_protocol() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let cad: Tensor<f32> = gaussian(&[512, 32], &mut rng);
    let img: Tensor<f32> = gaussian(&[512, 32], &mut rng);
    let random = eval_protocol(&cad, &img, 10, 1000, 42).unwrap();
    assert!(
        (random.mean - 0.10).abs() <= 0.01,
        "random baseline mean {:.4} not within 10% ± 1%",
        random.mean
    );

    for n_b in [1usize, 10, 64, 200] {
        let oracle = eval_protocol(&cad, &cad, n_b, 50, 1).unwrap();
        assert_eq!(oracle.mean, 1.0, "oracle embeddings at n_b={n_b}");
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 120.0, "took {dt:?}");
    println!(
        "ACCEPTANCE 9 PASS: random baseline {:.2}% ± {:.2}% (1000 repeats), oracle 100% at every n_b, {dt:?}",
        100.0 * random.mean,
        100.0 * random.std_dev
    );
}

// ---------------------------------------------------------------------
// Criterion 10: end-to-end smoke through the trained stack.
// ---------------------------------------------------------------------
#[test]
fn acceptance_10_end_to_end_smoke() {
    let start = std::time::Instant::now();
    let s = stack();
    let mut grammar_ok = 0usize;
    let mut total = 0usize;
    for (i, image) in s.test_images.iter().enumerate() {
        for seed in 0..4u64 {
            total += 1;
            let outcome = s
                .generator
                .generate(image, 1000 + 17 * i as u64 + seed)
                .expect("generation never crashes");
            if outcome.grammar_ok {
                grammar_ok += 1;
                // Every grammar-valid output must execute, render and
                // round-trip through JSON.
                let solid = execute(&outcome.sequence).expect("valid output executes");
                if is_valid(&solid, 32) {
                    let img = render_isometric(&solid, 128).expect("valid output renders");
                    assert!(img.data.iter().any(|&v| v > 0));
                    let _cloud = sample_surface(&solid, 64, 1, 24).expect("valid output samples");
                }
                let text = gencad_core::lang::to_json(&outcome.sequence);
                let back = gencad_core::lang::from_json(&text).unwrap();
                assert_eq!(outcome.sequence, back, "JSON round trip");
            }
        }
    }
    let ratio = grammar_ok as f64 / total as f64;
    let dt = start.elapsed();
    assert!(
        ratio >= 0.75,
        "grammar-valid ratio {ratio:.3} below 0.75 ({grammar_ok}/{total})"
    );
    assert!(dt.as_secs_f64() < 600.0, "took {dt:?}");
    println!(
        "ACCEPTANCE 10 PASS: {grammar_ok}/{total} grammar-valid generations (IR {:.3}), every valid output executed/rendered/round-tripped, {dt:?}",
        1.0 - ratio
    );
}

// ---------------------------------------------------------------------
// Supporting check: reconstruction metrics agree between the stack's own
// accuracy evaluation and the metric module (guards the shared stack).
// ---------------------------------------------------------------------
#[test]
fn acceptance_stack_reconstruction_consistency() {
    let s = stack();
    let mats = &s.matrices;
    let z = s.generator.csr.encode_frozen(mats).unwrap();
    let preds = s.generator.csr.greedy_decode(&z).unwrap();
    let cmd = cmd_accuracy(&preds, mats).unwrap();
    let par = param_accuracy(&preds, mats, 3).unwrap();
    assert!((cmd - s.csr_result.cmd_acc).abs() < 1e-9);
    assert!((par - s.csr_result.param_acc).abs() < 1e-9);
    // The reconstructions of a healthy overfit decode back into sequences.
    let mut decode_failures = 0;
    for m in &preds {
        if decode_sequence(m).is_err() {
            decode_failures += 1;
        }
    }
    assert_eq!(decode_failures, 0);
    assert_eq!(CommandType::ALL.len(), 6);
}
