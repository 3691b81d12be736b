use super::*;
use crate::gradcheck::finite_diff_check;

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

fn tiny_unit(variant: MuVariant, c_in: usize, seed: u64) -> (MemoryUnit, ParamSet) {
    let mut rng = SeedRng::new(seed);
    let mut params = ParamSet::new();
    let config = MuConfig::new(4, 3, 2, variant);
    let unit = MemoryUnit::register("mu", c_in, config, true, &mut params, &mut rng);
    (unit, params)
}

/// Random post-nonlinearity signals built directly from constants, for
/// driving `advance` without any parameters.
fn random_signals(
    tape: &mut Tape,
    config: &MuConfig,
    rng: &mut SeedRng,
    pinned_modes: Option<[f64; 3]>,
) -> InterfaceSignals {
    let (r, w) = (config.read_heads, config.width);
    let vec_of = |tape: &mut Tape, rng: &mut SeedRng, n: usize, lo: f64, hi: f64| {
        let data: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        tape.constant(data, vec![n])
    };
    let read_modes = match (config.variant, pinned_modes) {
        (MuVariant::Cbmu, _) => None,
        (MuVariant::Dnc, Some(m)) => {
            Some((0..r).map(|_| tape.constant(m.to_vec(), vec![3])).collect())
        }
        (MuVariant::Dnc, None) => Some(
            (0..r)
                .map(|_| {
                    let raw = vec_of(tape, rng, 3, -2.0, 2.0);
                    tape.softmax(raw)
                })
                .collect(),
        ),
    };
    InterfaceSignals {
        read_keys: (0..r).map(|_| vec_of(tape, rng, w, -1.0, 1.0)).collect(),
        read_strengths: (0..r).map(|_| vec_of(tape, rng, 1, 1.0, 4.0)).collect(),
        write_key: vec_of(tape, rng, w, -1.0, 1.0),
        write_strength: vec_of(tape, rng, 1, 1.0, 4.0),
        erase: vec_of(tape, rng, w, 0.01, 0.99),
        write_vec: vec_of(tape, rng, w, -1.0, 1.0),
        free_gates: (0..r).map(|_| vec_of(tape, rng, 1, 0.01, 0.99)).collect(),
        alloc_gate: vec_of(tape, rng, 1, 0.01, 0.99),
        write_gate: vec_of(tape, rng, 1, 0.01, 0.99),
        read_modes,
    }
}

// ── interface sizing and split ──────────────────────────────────────

#[test]
fn interface_len_matches_field_list() {
    let dnc = MuConfig::new(192, 64, 4, MuVariant::Dnc);
    let cbmu = MuConfig::new(192, 64, 4, MuVariant::Cbmu);
    assert_eq!(dnc.interface_len(), 471);
    assert_eq!(cbmu.interface_len(), 459);
}

#[test]
fn interface_len_difference_is_three_per_head() {
    for n in [1, 4, 16] {
        for w in [1, 3, 8] {
            for r in [1, 2, 4] {
                let d = MuConfig::new(n, w, r, MuVariant::Dnc).interface_len();
                let c = MuConfig::new(n, w, r, MuVariant::Cbmu).interface_len();
                assert_eq!(d - c, 3 * r);
            }
        }
    }
}

#[test]
fn projection_of_zero_hidden_gives_norm_bias() {
    let (unit, mut params) = tiny_unit(MuVariant::Dnc, 5, 1);
    let bias_id = params.by_name("mu.ln_b").unwrap();
    for (i, v) in params.get_mut(bias_id).data.iter_mut().enumerate() {
        *v = 0.01 * i as f64;
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = tape.zeros(vec![5]);
    let xi = unit.project_interface(&mut tape, h, &bound);
    for (i, &v) in tape.data(xi).iter().enumerate() {
        close(v, 0.01 * i as f64, 1e-12);
    }
}

#[test]
fn split_of_zero_interface_hits_nonlinearity_midpoints() {
    let (unit, _) = tiny_unit(MuVariant::Dnc, 5, 2);
    let mut tape = Tape::new();
    let xi = tape.zeros(vec![unit.config().interface_len()]);
    let sig = unit.split_interface(&mut tape, xi);
    let one_plus_ln2 = 1.0 + std::f64::consts::LN_2;
    for &s in &sig.read_strengths {
        close(tape.data(s)[0], one_plus_ln2, 1e-12);
    }
    close(tape.data(sig.write_strength)[0], one_plus_ln2, 1e-12);
    for &v in tape.data(sig.erase) {
        close(v, 0.5, 1e-12);
    }
    for &f in &sig.free_gates {
        close(tape.data(f)[0], 0.5, 1e-12);
    }
    close(tape.data(sig.alloc_gate)[0], 0.5, 1e-12);
    close(tape.data(sig.write_gate)[0], 0.5, 1e-12);
    for pi in sig.read_modes.as_ref().unwrap() {
        for &v in tape.data(*pi) {
            close(v, 1.0 / 3.0, 1e-12);
        }
    }
}

#[test]
fn split_slices_partition_the_interface() {
    // counting input makes any offset error visible in the raw slices
    let (unit, _) = tiny_unit(MuVariant::Dnc, 5, 3);
    let cfg = *unit.config();
    let (r, w) = (cfg.read_heads, cfg.width);
    let xi_len = cfg.interface_len();
    let mut tape = Tape::new();
    let iota: Vec<f64> = (0..xi_len).map(|i| i as f64 * 0.01).collect();
    let xi = tape.constant(iota.clone(), vec![xi_len]);
    let sig = unit.split_interface(&mut tape, xi);

    let mut off = 0;
    for i in 0..r {
        assert_eq!(tape.data(sig.read_keys[i]), &iota[off..off + w]);
        off += w;
    }
    for i in 0..r {
        let expect = 1.0 + (iota[off + i].max(0.0) + (-iota[off + i].abs()).exp().ln_1p());
        close(tape.data(sig.read_strengths[i])[0], expect, 1e-12);
    }
    off += r;
    assert_eq!(tape.data(sig.write_key), &iota[off..off + w]);
    off += w;
    off += 1; // write strength
    for j in 0..w {
        let e = 1.0 / (1.0 + (-iota[off + j]).exp());
        close(tape.data(sig.erase)[j], e, 1e-12);
    }
    off += w;
    assert_eq!(tape.data(sig.write_vec), &iota[off..off + w]);
    off += w;
    off += r + 1 + 1; // free gates, alloc gate, write gate
    assert_eq!(off + 3 * r, xi_len);
}

#[test]
fn read_modes_sum_to_one_for_random_interface() {
    let (unit, _) = tiny_unit(MuVariant::Dnc, 5, 4);
    let mut rng = SeedRng::new(40);
    for _ in 0..20 {
        let mut tape = Tape::new();
        let xi_data: Vec<f64> = (0..unit.config().interface_len())
            .map(|_| rng.uniform_sym(3.0))
            .collect();
        let xi = tape.constant(xi_data, vec![unit.config().interface_len()]);
        let sig = unit.split_interface(&mut tape, xi);
        for pi in sig.read_modes.as_ref().unwrap() {
            close(tape.data(*pi).iter().sum::<f64>(), 1.0, 1e-12);
        }
    }
}

// ── addressing pieces ───────────────────────────────────────────────

#[test]
fn content_weighting_basis_rows() {
    let mut tape = Tape::new();
    let m = tape.constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2]);
    let k = tape.constant(vec![1.0, 0.0], vec![2]);
    let beta = tape.constant(vec![1.0], vec![1]);
    let c = content_weighting(&mut tape, m, k, beta);
    close(tape.data(c)[0], 0.731059, 1e-5);
    close(tape.data(c)[1], 0.268941, 1e-5);
}

#[test]
fn content_weighting_identical_rows_is_uniform() {
    let mut tape = Tape::new();
    let m = tape.constant(vec![0.3, -0.7, 0.3, -0.7, 0.3, -0.7], vec![3, 2]);
    let k = tape.constant(vec![5.0, 2.0], vec![2]);
    let beta = tape.constant(vec![7.0], vec![1]);
    let c = content_weighting(&mut tape, m, k, beta);
    for &v in tape.data(c) {
        close(v, 1.0 / 3.0, 1e-12);
    }
}

#[test]
fn content_weighting_sharpens_to_one_hot() {
    let mut tape = Tape::new();
    let m = tape.constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2]);
    let k = tape.constant(vec![1.0, 0.0], vec![2]);
    let beta = tape.constant(vec![50.0], vec![1]);
    let c = content_weighting(&mut tape, m, k, beta);
    close(tape.data(c)[0], 1.0, 1e-9);
    close(tape.data(c)[1], 0.0, 1e-9);
}

#[test]
fn retention_and_usage_hand_case() {
    let mut tape = Tape::new();
    let u_prev = tape.constant(vec![0.2, 0.0], vec![2]);
    let ww_prev = tape.constant(vec![0.0, 1.0], vec![2]);
    let f = tape.constant(vec![0.5], vec![1]);
    let wr_prev = tape.constant(vec![1.0, 0.0], vec![2]);
    let (psi, u) = retention_usage(&mut tape, &[f], &[wr_prev], u_prev, ww_prev);
    assert_eq!(tape.data(psi), &[0.5, 1.0]);
    close(tape.data(u)[0], 0.1, 1e-12);
    close(tape.data(u)[1], 1.0, 1e-12);
}

#[test]
fn zero_free_gates_keep_everything() {
    let mut tape = Tape::new();
    let u_prev = tape.constant(vec![0.4, 0.6], vec![2]);
    let ww_prev = tape.constant(vec![0.3, 0.1], vec![2]);
    let f = tape.constant(vec![0.0], vec![1]);
    let wr_prev = tape.constant(vec![0.8, 0.2], vec![2]);
    let (psi, u) = retention_usage(&mut tape, &[f], &[wr_prev], u_prev, ww_prev);
    assert_eq!(tape.data(psi), &[1.0, 1.0]);
    // u = u_prev + ww_prev - u_prev*ww_prev
    close(tape.data(u)[0], 0.4 + 0.3 - 0.12, 1e-12);
    close(tape.data(u)[1], 0.6 + 0.1 - 0.06, 1e-12);
}

#[test]
fn full_free_zeroes_usage() {
    let mut tape = Tape::new();
    let u_prev = tape.constant(vec![0.9, 0.5], vec![2]);
    let ww_prev = tape.zeros(vec![2]);
    let f = tape.constant(vec![1.0], vec![1]);
    let wr_prev = tape.constant(vec![1.0, 0.0], vec![2]);
    let (_, u) = retention_usage(&mut tape, &[f], &[wr_prev], u_prev, ww_prev);
    close(tape.data(u)[0], 0.0, 1e-12);
    close(tape.data(u)[1], 0.5, 1e-12);
}

#[test]
fn allocation_prefers_least_used() {
    let mut tape = Tape::new();
    let u = tape.constant(vec![0.5, 0.1], vec![2]);
    let a = tape.allocation(u);
    close(tape.data(a)[0], 0.05, 1e-12);
    close(tape.data(a)[1], 0.9, 1e-12);
}

#[test]
fn write_weighting_cases() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![1.0, 0.0], vec![2]);
    let c = tape.constant(vec![0.0, 1.0], vec![2]);

    let gw0 = tape.zeros(vec![1]);
    let ga = tape.constant(vec![0.5], vec![1]);
    let w = write_weighting(&mut tape, gw0, ga, a, c);
    assert_eq!(tape.data(w), &[0.0, 0.0]);

    let gw1 = tape.constant(vec![1.0], vec![1]);
    let ga1 = tape.constant(vec![1.0], vec![1]);
    let w = write_weighting(&mut tape, gw1, ga1, a, c);
    assert_eq!(tape.data(w), &[1.0, 0.0]);

    let gw_half = tape.constant(vec![0.5], vec![1]);
    let ga_half = tape.constant(vec![0.5], vec![1]);
    let w = write_weighting(&mut tape, gw_half, ga_half, a, c);
    close(tape.data(w)[0], 0.25, 1e-12);
    close(tape.data(w)[1], 0.25, 1e-12);
}

#[test]
fn memory_update_cases() {
    let mut tape = Tape::new();
    let m = tape.constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);
    let e = tape.constant(vec![1.0, 1.0], vec![2]);
    let v = tape.constant(vec![9.0, 8.0], vec![2]);

    let w0 = tape.zeros(vec![2]);
    let m1 = memory_update(&mut tape, m, w0, e, v);
    assert_eq!(tape.data(m1), tape.data(m));

    let w_hot = tape.constant(vec![0.0, 1.0], vec![2]);
    let m2 = memory_update(&mut tape, m, w_hot, e, v);
    assert_eq!(tape.data(m2), &[1.0, 2.0, 9.0, 8.0]);

    let m_scalar = tape.constant(vec![2.0], vec![1, 1]);
    let w_half = tape.constant(vec![0.5], vec![1]);
    let e1 = tape.constant(vec![1.0], vec![1]);
    let v4 = tape.constant(vec![4.0], vec![1]);
    let m3 = memory_update(&mut tape, m_scalar, w_half, e1, v4);
    close(tape.data(m3)[0], 3.0, 1e-12);
}

#[test]
fn linkage_update_cases() {
    let mut tape = Tape::new();

    // no write: unchanged
    let l = tape.constant(vec![0.0, 0.4, 0.2, 0.0], vec![2, 2]);
    let p = tape.constant(vec![0.3, 0.5], vec![2]);
    let w0 = tape.zeros(vec![2]);
    let (l1, p1) = linkage_update(&mut tape, l, p, w0);
    assert_eq!(tape.data(l1), tape.data(l));
    assert_eq!(tape.data(p1), tape.data(p));

    // first-ever write: no predecessor, links stay empty
    let l_zero = tape.zeros(vec![3, 3]);
    let p_zero = tape.zeros(vec![3]);
    let w_first = tape.constant(vec![0.0, 1.0, 0.0], vec![3]);
    let (l2, p2) = linkage_update(&mut tape, l_zero, p_zero, w_first);
    assert!(tape.data(l2).iter().all(|&v| v == 0.0));
    assert_eq!(tape.data(p2), &[0.0, 1.0, 0.0]);

    // second write links current location to the previous one
    let w_second = tape.constant(vec![1.0, 0.0, 0.0], vec![3]);
    let (l3, p3) = linkage_update(&mut tape, l2, p2, w_second);
    let expect: Vec<f64> = (0..9).map(|i| if i == 1 { 1.0 } else { 0.0 }).collect();
    assert_eq!(tape.data(l3), &expect[..]); // entry [0,1] only
    assert_eq!(tape.data(p3), &[1.0, 0.0, 0.0]);
}

#[test]
fn linkage_reads_follow_write_order() {
    // writes went 1 then 0, so L[0,1] = 1
    let mut tape = Tape::new();
    let mut l_data = vec![0.0; 9];
    l_data[1] = 1.0;
    let l = tape.constant(l_data, vec![3, 3]);
    let c_dummy = tape.zeros(vec![3]);

    // forward from location 1 lands on 0 (written next)
    let at1 = tape.constant(vec![0.0, 1.0, 0.0], vec![3]);
    let pi_fwd = tape.constant(vec![0.0, 0.0, 1.0], vec![3]);
    let w = read_weightings_dnc(&mut tape, l, &[at1], &[c_dummy], &[pi_fwd]);
    assert_eq!(tape.data(w[0]), &[1.0, 0.0, 0.0]);

    // backward from location 0 lands on 1 (written before)
    let at0 = tape.constant(vec![1.0, 0.0, 0.0], vec![3]);
    let pi_bwd = tape.constant(vec![1.0, 0.0, 0.0], vec![3]);
    let w = read_weightings_dnc(&mut tape, l, &[at0], &[c_dummy], &[pi_bwd]);
    assert_eq!(tape.data(w[0]), &[0.0, 1.0, 0.0]);

    // pure content mode ignores the linkage entirely
    let c = tape.constant(vec![0.2, 0.3, 0.5], vec![3]);
    let pi_c = tape.constant(vec![0.0, 1.0, 0.0], vec![3]);
    let w = read_weightings_dnc(&mut tape, l, &[at0], &[c], &[pi_c]);
    assert_eq!(tape.data(w[0]), &[0.2, 0.3, 0.5]);
}

#[test]
fn read_vectors_cases() {
    let mut tape = Tape::new();
    let m = tape.constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);

    let hot = tape.constant(vec![0.0, 1.0], vec![2]);
    let (r, _) = read_vectors(&mut tape, m, &[hot]);
    assert_eq!(tape.data(r[0]), &[3.0, 4.0]);

    let zero = tape.zeros(vec![2]);
    let (r, _) = read_vectors(&mut tape, m, &[zero]);
    assert_eq!(tape.data(r[0]), &[0.0, 0.0]);

    let half = tape.constant(vec![0.5, 0.5], vec![2]);
    let (r, mu) = read_vectors(&mut tape, m, &[half, hot]);
    assert_eq!(tape.data(r[0]), &[2.0, 3.0]);
    assert_eq!(tape.data(mu), &[2.0, 3.0, 3.0, 4.0]);
}

#[test]
fn write_lands_on_the_single_free_location() {
    let config = MuConfig::new(4, 3, 1, MuVariant::Cbmu);
    let mut rng = SeedRng::new(9);
    let mut params = ParamSet::new();
    let unit = MemoryUnit::register("mu", 2, config, true, &mut params, &mut rng);
    let mut tape = Tape::new();

    let mut state = unit.init_state(&mut tape);
    // all locations fully used except index 2; nothing gets freed
    state.usage = tape.constant(vec![1.0, 1.0, 0.0, 1.0], vec![4]);
    let one = tape.constant(vec![1.0], vec![1]);
    let sig = InterfaceSignals {
        read_keys: vec![tape.constant(vec![0.1, 0.2, 0.3], vec![3])],
        read_strengths: vec![tape.constant(vec![2.0], vec![1])],
        write_key: tape.constant(vec![0.5, -0.5, 0.2], vec![3]),
        write_strength: tape.constant(vec![2.0], vec![1]),
        erase: tape.constant(vec![1.0, 1.0, 1.0], vec![3]),
        write_vec: tape.constant(vec![7.0, -3.0, 2.5], vec![3]),
        free_gates: vec![tape.zeros(vec![1])],
        alloc_gate: one,
        write_gate: one,
        read_modes: None,
    };
    let (_, next) = unit.advance(&mut tape, &sig, &state);
    assert_eq!(tape.data(next.write_w), &[0.0, 0.0, 1.0, 0.0]);
    let m = tape.data(next.memory);
    assert_eq!(&m[6..9], &[7.0, -3.0, 2.5]);
    assert_eq!(&m[0..6], &[0.0; 6]);
    assert_eq!(&m[9..12], &[0.0; 3]);
}

// ── full steps ──────────────────────────────────────────────────────

#[test]
fn step_from_zero_state_is_finite() {
    for variant in [MuVariant::Dnc, MuVariant::Cbmu] {
        let (unit, params) = tiny_unit(variant, 5, 11);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let mut state = unit.init_state(&mut tape);
        let h = tape.zeros(vec![5]);
        for _ in 0..3 {
            let (mu, next, sig) = unit.step(&mut tape, h, &state, &bound);
            assert!(tape.data(mu).iter().all(|v| v.is_finite()));
            assert!(tape.data(next.usage).iter().all(|v| v.is_finite()));
            close(tape.data(sig.alloc_gate)[0], 0.5, 1e-12);
            state = next;
        }
    }
}

#[test]
fn content_pinned_dnc_equals_cbmu() {
    // read modes forced to pure content make the full unit's reads collapse
    // onto the slim unit's, step for step, on a shared random drive
    let n_steps = 10;
    let n_seqs = 100;
    let mut rng = SeedRng::new(77);
    let dnc_cfg = MuConfig::new(6, 4, 2, MuVariant::Dnc);
    let cbmu_cfg = MuConfig::new(6, 4, 2, MuVariant::Cbmu);
    let mut scratch = ParamSet::new();
    let mut scratch_rng = SeedRng::new(0);
    let dnc = MemoryUnit::register("d", 3, dnc_cfg, true, &mut scratch, &mut scratch_rng);
    let cbmu = MemoryUnit::register("c", 3, cbmu_cfg, true, &mut scratch, &mut scratch_rng);

    for _ in 0..n_seqs {
        let mut tape = Tape::new();
        let mut s_dnc = dnc.init_state(&mut tape);
        let mut s_cbmu = cbmu.init_state(&mut tape);
        for _ in 0..n_steps {
            let shared = random_signals(&mut tape, &cbmu_cfg, &mut rng, None);
            let mut pinned = shared.clone();
            pinned.read_modes = Some(
                (0..dnc_cfg.read_heads)
                    .map(|_| tape.constant(vec![0.0, 1.0, 0.0], vec![3]))
                    .collect(),
            );
            let (mu_d, next_d) = dnc.advance(&mut tape, &pinned, &s_dnc);
            let (mu_c, next_c) = cbmu.advance(&mut tape, &shared, &s_cbmu);
            for (&a, &b) in tape.data(mu_d).iter().zip(tape.data(mu_c)) {
                close(a, b, 1e-12);
            }
            s_dnc = next_d;
            s_cbmu = next_c;
        }
    }
}

#[test]
fn state_invariants_hold_under_random_drive() {
    let tol = 1e-9;
    let mut rng = SeedRng::new(123);
    for variant in [MuVariant::Dnc, MuVariant::Cbmu] {
        let config = MuConfig::new(6, 4, 2, variant);
        let mut scratch = ParamSet::new();
        let mut srng = SeedRng::new(0);
        let unit = MemoryUnit::register("u", 3, config, true, &mut scratch, &mut srng);
        for _ in 0..250 {
            let mut tape = Tape::new();
            let mut state = unit.init_state(&mut tape);
            for _ in 0..6 {
                let sig = random_signals(&mut tape, &config, &mut rng, None);
                let (_, next) = unit.advance(&mut tape, &sig, &state);

                let ww_sum: f64 = tape.data(next.write_w).iter().sum();
                assert!(ww_sum <= 1.0 + tol, "write weighting sum {ww_sum}");
                assert!(tape.data(next.write_w).iter().all(|&v| v >= -tol));
                for &wr in &next.read_w {
                    let s: f64 = tape.data(wr).iter().sum();
                    assert!(s <= 1.0 + tol, "read weighting sum {s}");
                    assert!(tape.data(wr).iter().all(|&v| v >= -tol));
                    if variant == MuVariant::Cbmu {
                        assert!((s - 1.0).abs() <= tol, "content reads must normalize");
                    }
                }
                for &u in tape.data(next.usage) {
                    assert!((-tol..=1.0 + tol).contains(&u), "usage {u}");
                }
                if let (Some(l), Some(p)) = (next.linkage, next.precedence) {
                    let n = config.locations;
                    let ld = tape.data(l);
                    for i in 0..n {
                        assert_eq!(ld[i * n + i], 0.0, "nonzero linkage diagonal");
                        let row: f64 = ld[i * n..(i + 1) * n].iter().sum();
                        let col: f64 = (0..n).map(|j| ld[j * n + i]).sum();
                        assert!(row <= 1.0 + tol, "linkage row sum {row}");
                        assert!(col <= 1.0 + tol, "linkage column sum {col}");
                    }
                    let ps: f64 = tape.data(p).iter().sum();
                    assert!(ps <= 1.0 + tol && tape.data(p).iter().all(|&v| v >= -tol));
                }
                state = next;
            }
        }
    }
}

#[test]
fn gradcheck_through_five_steps() {
    for (variant, seed) in [(MuVariant::Dnc, 21), (MuVariant::Cbmu, 22)] {
        let (unit, mut params) = tiny_unit(variant, 3, seed);
        let mut drive_rng = SeedRng::new(seed * 100);
        let drives: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| drive_rng.uniform_sym(1.0)).collect())
            .collect();
        let mix: Vec<f64> = (0..unit.config().read_size())
            .map(|_| drive_rng.uniform_sym(1.0))
            .collect();
        let report = finite_diff_check(&mut params, 1e-5, 1, |tape, bound| {
            let mut state = unit.init_state(tape);
            let mut acc = tape.zeros(vec![1]);
            for d in &drives {
                let h = tape.constant(d.clone(), vec![3]);
                let (mu, next, _) = unit.step(tape, h, &state, bound);
                let weighted = tape.mul_const(mu, mix.clone());
                let s = tape.sum(weighted);
                acc = tape.add(acc, s);
                state = next;
            }
            acc
        });
        assert!(report.passed(1e-4), "{:?}: {}", variant, report.summary());
    }
}
