//! Differential evolution (rand/1/bin) over a box.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeSettings {
    pub population: usize,
    pub max_generations: usize,
    /// Differential weight `F`.
    pub weight: f64,
    /// Crossover probability `CR`.
    pub crossover: f64,
    /// Stop once `max − min` of the population costs drops below this.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeOutcome<const D: usize> {
    pub best: [f64; D],
    pub cost: f64,
    pub generations: usize,
    pub evaluations: usize,
    /// Final `max − min` of population costs.
    pub spread: f64,
}

fn spread(costs: &[f64]) -> f64 {
    let (lo, hi) = costs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    hi - lo
}

/// Index of the lowest cost; ties go to the lexicographically smaller point.
fn best_index<const D: usize>(population: &[[f64; D]], costs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..costs.len() {
        let better = costs[i] < costs[best]
            || (costs[i] == costs[best] && population[i].partial_cmp(&population[best]) == Some(std::cmp::Ordering::Less));
        if better {
            best = i;
        }
    }
    best
}

/// Minimizes `objective` inside `lower..=upper`.
///
/// Trial components that leave the box are redrawn uniformly inside it.
/// Selection is greedy and keeps the trial on equal cost.
pub fn minimize<const D: usize, R: Rng, F: FnMut(&[f64; D]) -> f64>(
    mut objective: F,
    lower: [f64; D],
    upper: [f64; D],
    settings: &DeSettings,
    rng: &mut R,
) -> DeOutcome<D> {
    let np = settings.population.max(4);
    let sample = |rng: &mut R, j: usize| {
        if upper[j] > lower[j] {
            rng.gen_range(lower[j]..=upper[j])
        } else {
            lower[j]
        }
    };
    let mut population: Vec<[f64; D]> = (0..np)
        .map(|_| std::array::from_fn(|j| sample(rng, j)))
        .collect();
    let mut costs: Vec<f64> = population.iter().map(&mut objective).collect();
    let mut evaluations = np;
    let mut generations = 0;

    while generations < settings.max_generations && spread(&costs) >= settings.tolerance {
        generations += 1;
        for i in 0..np {
            let (r1, r2, r3) = distinct_triple(rng, np, i);
            let forced = rng.gen_range(0..D);
            let mut trial = population[i];
            for j in 0..D {
                if j == forced || rng.gen::<f64>() < settings.crossover {
                    let v = population[r1][j] + settings.weight * (population[r2][j] - population[r3][j]);
                    trial[j] = if v < lower[j] || v > upper[j] { sample(rng, j) } else { v };
                }
            }
            let cost = objective(&trial);
            evaluations += 1;
            if cost <= costs[i] {
                population[i] = trial;
                costs[i] = cost;
            }
        }
    }

    let b = best_index(&population, &costs);
    DeOutcome {
        best: population[b],
        cost: costs[b],
        generations,
        evaluations,
        spread: spread(&costs),
    }
}

fn distinct_triple<R: Rng>(rng: &mut R, n: usize, exclude: usize) -> (usize, usize, usize) {
    let mut pick = |taken: &[usize]| loop {
        let r = rng.gen_range(0..n);
        if r != exclude && !taken.contains(&r) {
            return r;
        }
    };
    let a = pick(&[]);
    let b = pick(&[a]);
    let c = pick(&[a, b]);
    (a, b, c)
}
