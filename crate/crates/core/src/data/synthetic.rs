//! Seeded generators producing CSV text in the layout of the bundled
//! schemas. The rows are synthetic: a latent ability drives the grades and
//! the outcome, and group membership shifts that ability to create a
//! measurable disparity. They exist for demos and pipeline tests and carry
//! no information about the real populations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::seed::{self, Stream};

fn normal(rng: &mut impl Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

fn clamp_round(v: f64, lo: f64, hi: f64) -> f64 {
    v.round().clamp(lo, hi)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Law-school-shaped rows (`schemas/law_school.toml`). About 16% of rows
/// are in the `Non-White` group.
pub fn law_school_csv(rows: usize, seed: u64) -> String {
    let mut rng = seed::rng(seed, Stream::Synthetic);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "decile1b", "decile3", "lsat", "ugpa", "zfygpa", "zgpa", "fulltime", "fam_inc", "male", "tier", "race",
        "pass_bar",
    ])
    .expect("in-memory write");
    for _ in 0..rows {
        let nonwhite = rng.random_bool(0.16);
        let ability = normal(&mut rng) - if nonwhite { 0.9 } else { 0.0 };
        let lsat = (36.5 + 5.0 * ability + 1.5 * normal(&mut rng)).clamp(11.0, 48.0);
        let ugpa = (3.2 + 0.3 * ability + 0.25 * normal(&mut rng)).clamp(1.5, 4.0);
        let decile1b = clamp_round(5.5 + 2.3 * ability + 1.5 * normal(&mut rng), 1.0, 10.0);
        let decile3 = clamp_round(5.5 + 2.3 * ability + 1.5 * normal(&mut rng), 1.0, 10.0);
        let zfygpa = 0.7 * ability + 0.6 * normal(&mut rng);
        let zgpa = 0.7 * ability + 0.6 * normal(&mut rng);
        let fulltime = if rng.random_bool(0.9) { 1 } else { 2 };
        let fam_inc = clamp_round(3.4 + 0.5 * ability + 0.9 * normal(&mut rng), 1.0, 5.0);
        let male = u8::from(rng.random_bool(0.56));
        let tier = clamp_round(3.7 + 0.6 * ability + 1.2 * normal(&mut rng), 1.0, 6.0);
        let p = sigmoid(2.6 + 1.7 * ability + 0.4 * zgpa);
        let pass = u8::from(rng.random_bool(p));
        w.write_record([
            format!("{decile1b}"),
            format!("{decile3}"),
            format!("{lsat:.1}"),
            format!("{ugpa:.2}"),
            format!("{zfygpa:.3}"),
            format!("{zgpa:.3}"),
            format!("{fulltime}"),
            format!("{fam_inc}"),
            format!("{male}"),
            format!("{tier}"),
            (if nonwhite { "Non-White" } else { "White" }).to_string(),
            format!("{pass}"),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Student-performance-shaped rows (`schemas/student_math.toml`), with
/// about 52.7% female students.
pub fn student_math_csv(rows: usize, seed: u64) -> String {
    let mut rng = seed::rng(seed, Stream::Synthetic);
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "school",
        "sex",
        "age",
        "address",
        "famsize",
        "Pstatus",
        "Medu",
        "Fedu",
        "Mjob",
        "Fjob",
        "reason",
        "guardian",
        "traveltime",
        "studytime",
        "failures",
        "schoolsup",
        "famsup",
        "paid",
        "activities",
        "nursery",
        "higher",
        "internet",
        "romantic",
        "famrel",
        "freetime",
        "goout",
        "Dalc",
        "Walc",
        "health",
        "absences",
        "G1",
        "G2",
        "G3",
    ];
    w.write_record(header).expect("in-memory write");
    let jobs = ["teacher", "health", "services", "at_home", "other"];
    let reasons = ["home", "reputation", "course", "other"];
    let guardians = ["mother", "father", "other"];
    let yes_no = |rng: &mut rand_chacha::ChaCha8Rng, p: f64| if rng.random_bool(p) { "yes" } else { "no" };
    for _ in 0..rows {
        let female = rng.random_bool(0.527);
        let ability = normal(&mut rng);
        let studytime =
            clamp_round(2.0 + 0.5 * ability + if female { 0.4 } else { 0.0 } + 0.7 * normal(&mut rng), 1.0, 4.0);
        let failures = if ability < -1.2 { rng.random_range(1..4) } else { 0 };
        let g1 = clamp_round(11.0 + 3.2 * ability + 1.2 * normal(&mut rng), 3.0, 19.0);
        let g2 = clamp_round(g1 + 1.2 * normal(&mut rng), 0.0, 20.0);
        let dropped = rng.random_bool(0.09 * sigmoid(-2.0 * ability) * 2.0);
        let g3 = if dropped { 0.0 } else { clamp_round(g2 + 0.5 + 1.1 * normal(&mut rng), 0.0, 20.0) };
        let rec: Vec<String> = vec![
            (if rng.random_bool(0.88) { "GP" } else { "MS" }).into(),
            (if female { "F" } else { "M" }).into(),
            format!("{}", rng.random_range(15..=19)),
            (if rng.random_bool(0.78) { "U" } else { "R" }).into(),
            (if rng.random_bool(0.71) { "GT3" } else { "LE3" }).into(),
            (if rng.random_bool(0.9) { "T" } else { "A" }).into(),
            format!("{}", clamp_round(2.7 + 0.4 * ability + normal(&mut rng), 0.0, 4.0)),
            format!("{}", clamp_round(2.5 + 0.3 * ability + normal(&mut rng), 0.0, 4.0)),
            jobs[rng.random_range(0..jobs.len())].into(),
            jobs[rng.random_range(0..jobs.len())].into(),
            reasons[rng.random_range(0..reasons.len())].into(),
            guardians[rng.random_range(0..guardians.len())].into(),
            format!("{}", rng.random_range(1..=4)),
            format!("{studytime}"),
            format!("{failures}"),
            yes_no(&mut rng, 0.13).into(),
            yes_no(&mut rng, 0.61).into(),
            yes_no(&mut rng, 0.46).into(),
            yes_no(&mut rng, 0.51).into(),
            yes_no(&mut rng, 0.79).into(),
            yes_no(&mut rng, 0.95).into(),
            yes_no(&mut rng, 0.83).into(),
            yes_no(&mut rng, 0.33).into(),
            format!("{}", rng.random_range(1..=5)),
            format!("{}", rng.random_range(1..=5)),
            format!("{}", rng.random_range(1..=5)),
            format!("{}", rng.random_range(1..=5)),
            format!("{}", rng.random_range(1..=5)),
            format!("{}", rng.random_range(1..=5)),
            format!("{}", rng.random_range(0..=20)),
            format!("{g1}"),
            format!("{g2}"),
            format!("{g3}"),
        ];
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
