use std::f64::consts::PI;
use std::io::Write;

use ghr_core::climatology::ClimatologyBuilder;
use ghr_core::format::{read_state, write_state};
use ghr_core::grid::GridSpec;
use ghr_core::normalize::StatsAccumulator;
use ghr_core::state::{subsample_centers, upsample_nearest, WeatherState};
use ghr_core::stations::ingest_stations;
use ghr_core::synth::{generate_synthetic, Generator, SynthOptions};
use ghr_core::time::{self, utc};
use ghr_core::variables::VariableSet;
use ghr_core::GhrError;
use ghr_tensor::{Rng, Tensor};
use proptest::prelude::{prop, prop_assert_eq, proptest};

fn hr_grid() -> GridSpec {
    GridSpec::global(48, 96).unwrap()
}

#[test]
fn synthetic_is_deterministic() {
    let vars = VariableSet::toy();
    let a = generate_synthetic(11, &hr_grid(), 3, utc(2021, 1, 1, 0), 3, &vars).unwrap();
    let b = generate_synthetic(11, &hr_grid(), 3, utc(2021, 1, 1, 0), 3, &vars).unwrap();
    for (x, y) in a.0.iter().zip(&b.0).chain(a.1.iter().zip(&b.1)) {
        let xb: Vec<u32> = x.values.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u32> = y.values.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb);
    }
    let c = generate_synthetic(12, &hr_grid(), 3, utc(2021, 1, 1, 0), 1, &vars).unwrap();
    assert_ne!(c.0[0].values, a.0[0].values);
}

#[test]
fn factor_one_lr_equals_hr() {
    let grid = GridSpec::global(16, 32).unwrap();
    let (hr, lr) =
        generate_synthetic(3, &grid, 1, utc(2021, 6, 1, 12), 2, &VariableSet::toy()).unwrap();
    assert_eq!(hr, lr);
}

#[test]
fn even_factor_is_rejected() {
    let err = generate_synthetic(3, &hr_grid(), 2, utc(2021, 1, 1, 0), 1, &VariableSet::toy());
    assert!(matches!(err, Err(GhrError::Invalid(_))));
}

#[test]
fn lr_states_are_center_subsamples() {
    let (hr, lr) = generate_synthetic(
        5,
        &hr_grid(),
        3,
        utc(2016, 2, 29, 18),
        1,
        &VariableSet::toy(),
    )
    .unwrap();
    let (h, w) = (48, 96);
    for c in 0..8 {
        for i in 0..16 {
            for j in 0..32 {
                let a = lr[0].values.get(&[c, i, j]);
                let b = hr[0].values.data()[(c * h + 3 * i + 1) * w + 3 * j + 1];
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

/// Naive 2-D DFT power `|F(u,v)|²` of an `h×w` field.
fn power_spectrum(f: &[f64], h: usize, w: usize) -> Vec<f64> {
    // Rows first, then columns.
    let mut rows = vec![(0.0, 0.0); h * w];
    for i in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..w {
                let a = -2.0 * PI * (v * j) as f64 / w as f64;
                re += f[i * w + j] * a.cos();
                im += f[i * w + j] * a.sin();
            }
            rows[i * w + v] = (re, im);
        }
    }
    let mut p = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..h {
                let a = -2.0 * PI * (u * i) as f64 / h as f64;
                let (x, y) = rows[i * w + v];
                re += x * a.cos() - y * a.sin();
                im += x * a.sin() + y * a.cos();
            }
            p[u * w + v] = re * re + im * im;
        }
    }
    p
}

#[test]
fn hr_excess_lives_above_lr_nyquist() {
    let (hr, lr) = generate_synthetic(
        2,
        &hr_grid(),
        3,
        utc(2021, 4, 10, 6),
        1,
        &VariableSet::toy(),
    )
    .unwrap();
    let up = upsample_nearest(&lr[0], &hr_grid()).unwrap();
    let (h, w) = (48, 96);
    let (ny_lat, ny_lon) = (16 / 2, 32 / 2);
    for c in [2usize, 5] {
        let diff: Vec<f64> = hr[0]
            .plane(c)
            .iter()
            .zip(up.plane(c))
            .map(|(&a, &b)| a as f64 - b as f64)
            .collect();
        let p = power_spectrum(&diff, h, w);
        let (mut high, mut total) = (0.0, 0.0);
        for u in 0..h {
            for v in 0..w {
                let fu = u.min(h - u);
                let fv = v.min(w - v);
                total += p[u * w + v];
                if fu > ny_lat || fv > ny_lon {
                    high += p[u * w + v];
                }
            }
        }
        let frac = high / total;
        assert!(frac > 0.9, "channel {c}: fraction {frac}");
    }
}

#[test]
fn time_invariant_option_freezes_fields() {
    let opts = SynthOptions {
        time_scale: 0.0,
        ..SynthOptions::default()
    };
    let g = Generator::new(1, hr_grid(), 3, VariableSet::toy(), opts).unwrap();
    let a = g.hr_state(utc(2021, 1, 1, 0)).unwrap();
    let b = g.hr_state(utc(2021, 7, 9, 18)).unwrap();
    assert_eq!(a.values, b.values);
}

fn daily_state(grid: &GridSpec, t: time::Timestamp, values: Tensor) -> WeatherState {
    let vars = VariableSet::new(vec![ghr_core::variables::Channel::surface("a")]).unwrap();
    WeatherState::new(grid.clone(), vars, values, t).unwrap()
}

fn days_of(year: i32) -> impl Iterator<Item = time::Timestamp> {
    let start = utc(year, 1, 1, 0);
    let end = utc(year + 1, 1, 1, 0);
    (0..)
        .map(move |d| start + chrono::Duration::days(d))
        .take_while(move |t| *t < end)
}

#[test]
fn single_leap_year_climatology_is_that_year() {
    let grid = GridSpec::global(2, 4).unwrap();
    let mut rng = Rng::seed(4);
    let mut b = ClimatologyBuilder::new();
    let mut fields = Vec::new();
    for t in days_of(2020) {
        let v = rng.normal_tensor([1, 2, 4], 3.0);
        b.push(&daily_state(&grid, t, v.clone())).unwrap();
        fields.push(v);
    }
    let clim = b.finish("2020").unwrap();
    assert_eq!(clim.days, fields);
}

#[test]
fn opposite_years_cancel_and_leap_day_is_filled() {
    let grid = GridSpec::global(2, 4).unwrap();
    let mut rng = Rng::seed(5);
    let mut b = ClimatologyBuilder::new();
    let fields: Vec<Tensor> = days_of(2021)
        .map(|_| rng.normal_tensor([1, 2, 4], 1.0))
        .collect();
    for (t, v) in days_of(2021).zip(&fields) {
        b.push(&daily_state(&grid, t, v.clone())).unwrap();
    }
    for (t, v) in days_of(2022).zip(&fields) {
        let neg = Tensor::new(v.shape(), v.data().iter().map(|x| -x).collect()).unwrap();
        b.push(&daily_state(&grid, t, neg)).unwrap();
    }
    let clim = b.finish("2021-2022").unwrap();
    for d in &clim.days {
        assert!(d.data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn leap_slot_is_neighbour_average() {
    let grid = GridSpec::global(2, 4).unwrap();
    let mut b = ClimatologyBuilder::new();
    for (n, t) in days_of(2021).enumerate() {
        b.push(&daily_state(&grid, t, Tensor::full([1, 2, 4], n as f32)))
            .unwrap();
    }
    let clim = b.finish("2021").unwrap();
    // 28 Feb is day index 58, 1 Mar is index 59.
    assert_eq!(clim.day(59).data()[0], 58.0);
    assert_eq!(clim.day(60).data()[0], 58.5);
    assert_eq!(clim.day(61).data()[0], 59.0);
}

#[test]
fn three_years_match_brute_force_average() {
    let grid = GridSpec::global(4, 8).unwrap();
    let gen = Generator::new(
        9,
        grid.clone(),
        1,
        VariableSet::toy(),
        SynthOptions::default(),
    )
    .unwrap();
    let mut b = ClimatologyBuilder::new();
    let mut states = Vec::new();
    for year in 2017..2020 {
        for t in days_of(year).step_by(1) {
            for hour in [0, 12] {
                let s = gen.hr_state(t + chrono::Duration::hours(hour)).unwrap();
                b.push(&s).unwrap();
                states.push(s);
            }
        }
    }
    let clim = b.finish("3y").unwrap();
    for slot in [1u16, 59, 61, 200, 366] {
        let members: Vec<&WeatherState> = states
            .iter()
            .filter(|s| time::day_slot(&s.valid_time) == slot)
            .collect();
        for idx in 0..clim.day(slot).numel() {
            let mut sum = 0.0f64;
            for m in &members {
                sum += m.values.data()[idx] as f64;
            }
            let expected = (sum / members.len() as f64) as f32;
            assert_eq!(
                clim.day(slot).data()[idx],
                expected,
                "slot {slot} index {idx}"
            );
        }
    }
}

#[test]
fn climatology_of_climatology_is_itself() {
    let grid = GridSpec::global(2, 4).unwrap();
    let mut rng = Rng::seed(6);
    let mut b = ClimatologyBuilder::new();
    for t in days_of(2019) {
        for hour in [0, 6] {
            let v = rng.normal_tensor([1, 2, 4], 1.0);
            b.push(&daily_state(&grid, t + chrono::Duration::hours(hour), v))
                .unwrap();
        }
    }
    let clim = b.finish("2019").unwrap();
    let mut again = ClimatologyBuilder::new();
    for s in clim.as_states().unwrap() {
        again.push(&s).unwrap();
    }
    assert_eq!(again.finish("x").unwrap().days, clim.days);
}

#[test]
fn missing_days_are_listed() {
    let grid = GridSpec::global(2, 4).unwrap();
    let mut b = ClimatologyBuilder::new();
    for t in days_of(2021).filter(|t| time::day_slot(t) != 100 && time::day_slot(t) != 101) {
        b.push(&daily_state(&grid, t, Tensor::zeros([1, 2, 4])))
            .unwrap();
    }
    match b.finish("gap") {
        Err(GhrError::MissingDays(d)) => assert_eq!(d, vec![100, 101]),
        other => panic!("expected missing days, got {other:?}"),
    }
}

#[test]
fn inconsistent_grids_are_rejected() {
    let mut b = ClimatologyBuilder::new();
    let g1 = GridSpec::global(2, 4).unwrap();
    let g2 = GridSpec::global(4, 8).unwrap();
    b.push(&daily_state(
        &g1,
        utc(2021, 1, 1, 0),
        Tensor::zeros([1, 2, 4]),
    ))
    .unwrap();
    let err = b.push(&daily_state(
        &g2,
        utc(2021, 1, 2, 0),
        Tensor::zeros([1, 4, 8]),
    ));
    assert!(matches!(err, Err(GhrError::Grid(_))));
}

#[test]
fn state_file_roundtrip_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let (hr, _) =
        generate_synthetic(1, &hr_grid(), 3, utc(2022, 1, 1, 0), 1, &VariableSet::toy()).unwrap();
    let path = dir.path().join("a.ghr");
    write_state(&hr[0], &path).unwrap();
    assert_eq!(read_state(&path).unwrap(), hr[0]);
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ghr");
    std::fs::write(&cut, &bytes[..100]).unwrap();
    match read_state(&cut) {
        Err(GhrError::Format { offset, .. }) => assert!(offset <= 100 && offset > 0),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn hundred_rows_three_corrupt() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "station_id,lat,lon,time_iso8601,variable,value").unwrap();
    let mut rng = Rng::seed(8);
    let corrupt = [13usize, 57, 91];
    for i in 0..100 {
        let lat = rng.uniform(-89.0, 89.0);
        let lon = rng.uniform(-180.0, 360.0);
        let t = time::iso(&(utc(2022, 1, 1, 0) + time::step() * (i as i32 % 8)));
        let row = match corrupt.iter().position(|&c| c == i) {
            Some(0) => format!("S{i},{lat},{lon},not-a-time,t2m,280.0"),
            Some(1) => format!("S{i},123.0,{lon},{t},t2m,280.0"),
            Some(_) => format!("S{i},{lat},{lon},{t},t2m"),
            None => format!("S{i},{lat},{lon},{t},ws10,{}", rng.uniform(0.0, 20.0)),
        };
        writeln!(f, "{row}").unwrap();
    }
    let out = ingest_stations(f.path(), false).unwrap();
    assert_eq!(out.records.len(), 97);
    assert_eq!(out.malformed, 3);
    assert!(out.records.iter().all(|r| (0.0..360.0).contains(&r.lon)));
    assert!(ingest_stations(f.path(), true).is_err());
}

#[test]
fn welford_stats_match_two_pass() {
    let grid = GridSpec::global(16, 32).unwrap();
    let gen = Generator::new(
        21,
        hr_grid(),
        3,
        VariableSet::toy(),
        SynthOptions::default(),
    )
    .unwrap();
    let states: Vec<WeatherState> = (0..40)
        .map(|s| gen.lr_state(utc(2016, 1, 1, 0) + time::step() * s).unwrap())
        .collect();
    assert_eq!(states[0].grid, grid);
    let mut acc = StatsAccumulator::new(8);
    for s in &states {
        acc.push_state(s).unwrap();
    }
    let stats = acc.finish().unwrap();
    for c in 0..8 {
        let vals: Vec<f64> = states
            .iter()
            .flat_map(|s| s.plane(c).iter().map(|&v| v as f64))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            ((stats.mean[c] - mean) / mean.abs().max(std)).abs() < 1e-10,
            "mean c={c}"
        );
        assert!(((stats.std[c] - std) / std).abs() < 1e-10, "std c={c}");
    }
}

proptest! {
    #[test]
    fn subsample_upsample_subsample_is_idempotent(seed in 0u64..1000, k in prop::sample::select(vec![1usize, 3, 5])) {
        let grid = GridSpec::global(30, 60).unwrap();
        let values = Rng::seed(seed).normal_tensor([2, 30, 60], 1.0);
        let vars = VariableSet::new(vec![
            ghr_core::variables::Channel::surface("a"),
            ghr_core::variables::Channel::surface("b"),
        ]).unwrap();
        let s = WeatherState::new(grid.clone(), vars, values, utc(2022, 1, 1, 0)).unwrap();
        let once = subsample_centers(&s, k).unwrap();
        let twice = subsample_centers(&upsample_nearest(&once, &grid).unwrap(), k).unwrap();
        prop_assert_eq!(once, twice);
    }
}
