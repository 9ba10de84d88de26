//! Shared fixture for the directional acceptance criteria: one expert, one
//! recorded observation file, and the full grid of comparison runs. Built
//! once per fixture version and cached under the system temp directory, so
//! iterating on one criterion does not retrain everything.

pub mod fixture {
    use std::collections::BTreeMap;
    use std::path::{Path, PathBuf};
    use std::sync::{Mutex, OnceLock};

    use saceo::buffers::ExpertDataset;
    use saceo::envs::make_env;
    use saceo::harness::{
        cmd_record_expert, cmd_run, cmd_train_expert, parse_expert_record, RunConfig,
    };
    use saceo::rng::{SeededRng, Stream};

    /// Bump to invalidate cached fixture artifacts.
    const FIXTURE_VERSION: &str = "v1";
    pub const SEEDS: [u64; 3] = [1, 2, 3];

    pub struct Fixture {
        pub expert_return: f64,
        /// label -> per-seed evaluation curves, ordered by seed.
        pub curves: BTreeMap<String, Vec<Vec<(usize, f64)>>>,
    }

    impl Fixture {
        pub fn steps_to_fraction(&self, label: &str, fraction: f64) -> Vec<Option<usize>> {
            let threshold = fraction * self.expert_return;
            self.curves[label]
                .iter()
                .map(|curve| {
                    curve
                        .iter()
                        .find(|(_, r)| *r >= threshold)
                        .map(|(s, _)| *s)
                })
                .collect()
        }

        pub fn final_returns(&self, label: &str) -> Vec<f64> {
            self.curves[label]
                .iter()
                .map(|curve| curve.last().expect("curve has rows").1)
                .collect()
        }
    }

    /// Median with never-reached treated as beyond any budget.
    pub fn median(values: &[Option<usize>]) -> usize {
        let mut keyed: Vec<usize> = values
            .iter()
            .map(|v| v.unwrap_or(usize::MAX))
            .collect();
        keyed.sort_unstable();
        keyed[keyed.len() / 2]
    }

    fn repo_config(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs")
            .join(name)
    }

    fn fixture_root() -> PathBuf {
        std::env::temp_dir().join("saceo-acceptance-fixture")
    }

    fn config_text() -> String {
        let desk = std::fs::read_to_string(repo_config("pendulum-desk.cfg")).unwrap();
        let expert = std::fs::read_to_string(repo_config("pendulum-expert.cfg")).unwrap();
        format!("{FIXTURE_VERSION}\n--- desk\n{desk}\n--- expert\n{expert}")
    }

    fn ensure_stamp(root: &Path) {
        let stamp = root.join("stamp.txt");
        let want = config_text();
        let have = std::fs::read_to_string(&stamp).unwrap_or_default();
        if have != want {
            if root.exists() {
                std::fs::remove_dir_all(root).unwrap();
            }
            std::fs::create_dir_all(root).unwrap();
            std::fs::write(&stamp, want).unwrap();
        }
    }

    fn desk_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.apply_file(&repo_config("pendulum-desk.cfg")).unwrap();
        cfg
    }

    fn build_expert(root: &Path) -> (PathBuf, f64) {
        let expert_dir = root.join("expert");
        let record = expert_dir.join("expert_record.txt");
        let expert_file = root.join("expert.txt");
        if !(record.exists() && expert_file.exists()) {
            let mut cfg = RunConfig::default();
            cfg.apply_file(&repo_config("pendulum-expert.cfg")).unwrap();
            cfg.out_dir = Some(expert_dir.clone());
            let outcome = cmd_train_expert(&cfg).unwrap();
            cmd_record_expert(
                &outcome.checkpoint,
                &cfg.env,
                cfg.horizon,
                cfg.record_trajectories,
                cfg.record_states,
                &expert_file,
                cfg.seed,
            )
            .unwrap();
            if let Some(threshold) = cfg.expert_return_threshold {
                assert!(
                    outcome.evaluation.mean_return >= threshold,
                    "expert return {} is below the declared threshold {threshold}",
                    outcome.evaluation.mean_return
                );
            }
        }
        (expert_file, parse_expert_record(&record).unwrap())
    }

    fn run_grid(root: &Path, expert_file: &Path) {
        let mut jobs: Vec<(String, RunConfig)> = Vec::new();
        for &seed in &SEEDS {
            for label in ["sac", "sac-eo", "bco", "fixed-0.1", "fixed-0.01"] {
                let dir = root.join(format!("{label}-seed{seed}"));
                if dir.join("metrics.csv").exists() {
                    continue;
                }
                let mut cfg = desk_config();
                cfg.seed = seed;
                cfg.out_dir = Some(dir);
                match label {
                    "sac" => cfg.set("algo", "sac").unwrap(),
                    "sac-eo" => {
                        cfg.set("algo", "sac-eo").unwrap();
                        cfg.expert_path = Some(expert_file.to_path_buf());
                    }
                    "bco" => {
                        cfg.set("algo", "bco").unwrap();
                        cfg.set("beta", "0").unwrap();
                        cfg.expert_path = Some(expert_file.to_path_buf());
                    }
                    "fixed-0.1" => {
                        cfg.set("algo", "sac-eo-fixed").unwrap();
                        cfg.set("epsilon", "0.1").unwrap();
                        cfg.expert_path = Some(expert_file.to_path_buf());
                    }
                    "fixed-0.01" => {
                        cfg.set("algo", "sac-eo-fixed").unwrap();
                        cfg.set("epsilon", "0.01").unwrap();
                        cfg.expert_path = Some(expert_file.to_path_buf());
                    }
                    other => unreachable!("{other}"),
                }
                jobs.push((label.to_string(), cfg));
            }
        }
        if jobs.is_empty() {
            return;
        }
        // Two workers: runs are independent processes-in-threads; each run
        // stays internally deterministic.
        let queue = Mutex::new(jobs);
        std::thread::scope(|scope| {
            for _ in 0..2 {
                scope.spawn(|| loop {
                    let job = queue.lock().unwrap().pop();
                    let Some((label, cfg)) = job else { break };
                    let started = std::time::Instant::now();
                    cmd_run(&cfg).unwrap();
                    eprintln!(
                        "  fixture run {label} seed {} finished in {:.0}s",
                        cfg.seed,
                        started.elapsed().as_secs_f64()
                    );
                });
            }
        });
    }

    fn load_curve(dir: &Path) -> Vec<(usize, f64)> {
        let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        text.lines()
            .skip(1)
            .map(|line| {
                let mut cols = line.split(',');
                let step: usize = cols.next().unwrap().parse().unwrap();
                let ret: f64 = cols.next().unwrap().parse().unwrap();
                (step, ret)
            })
            .collect()
    }

    pub fn get() -> &'static Fixture {
        static FIXTURE: OnceLock<Fixture> = OnceLock::new();
        FIXTURE.get_or_init(|| {
            let root = fixture_root();
            ensure_stamp(&root);
            let (expert_file, expert_return) = build_expert(&root);
            run_grid(&root, &expert_file);
            let mut curves = BTreeMap::new();
            for label in ["sac", "sac-eo", "bco", "fixed-0.1", "fixed-0.01"] {
                let per_seed: Vec<Vec<(usize, f64)>> = SEEDS
                    .iter()
                    .map(|seed| load_curve(&root.join(format!("{label}-seed{seed}"))))
                    .collect();
                curves.insert(label.to_string(), per_seed);
            }
            Fixture {
                expert_return,
                curves,
            }
        })
    }

    /// Small synthetic state-only dataset with pendulum dimensions, for
    /// criteria that need expert-shaped data but not expert quality.
    pub fn synthetic_pendulum_expert(seed: u64) -> ExpertDataset {
        let mut env = make_env("pendulum-swingup", 60).unwrap();
        let mut rng = SeededRng::new(seed, Stream::Env);
        let mut trajs = Vec::new();
        for t in 0..4 {
            let mut obs = env.reset(&mut rng);
            let mut states = vec![obs.clone()];
            for i in 0..60 {
                let a = ((i + t * 7) as f64 * 0.37).sin();
                let (next, _) = env.step(&[a]).unwrap();
                obs = next;
                states.push(obs.clone());
            }
            trajs.push(states);
        }
        ExpertDataset::new(3, trajs).unwrap()
    }
}
