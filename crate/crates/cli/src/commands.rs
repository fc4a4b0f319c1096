//! One function per command. Each returns the files it wants written;
//! nothing touches the disk until a run has fully succeeded.

use std::path::Path;

use aggflow::dynamics::{
    collapse_experiment, contraction_report, energy_identity_report, jko_step_with, simulate_with,
    JkoOptions, SimulationOptions, StateDiagnostics, Trajectory,
};
use aggflow::energy::{interaction_energy, moreau_energy};
use aggflow::io::{to_summary_json, write_trajectory_csv};
use aggflow::scenarios::{
    certify_stationary, circle_f, circle_radius, circle_residual, pyramid_counterexample,
    vertex_condition, CIRCLE_BRACKET,
};
use aggflow::selection::minimal_selection;
use aggflow::transport::wasserstein;
use aggflow::{ParticleMeasure, Potential};
use anyhow::{anyhow, Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Energy,
    Selection,
    Simulate,
    Jko,
    Stationary,
    CircleRadius,
    Pyramid,
    Collapse,
    Contraction,
}

/// Resolved inputs of one run.
pub struct Job {
    pub command: Command,
    pub config: Config,
    pub potential: Option<Potential>,
    pub measure: Option<ParticleMeasure>,
    pub other_measure: Option<ParticleMeasure>,
}

pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Job {
    /// Builds every input up front so that bad configs fail before any work.
    pub fn prepare(command: Command, config: Config, base_dir: &Path) -> Result<Self> {
        let needs_inputs = !matches!(command, Command::CircleRadius | Command::Pyramid);
        let potential = match (&config.potential, needs_inputs) {
            (Some(spec), true) => Some(spec.build().context("invalid potential")?),
            (None, true) => return Err(anyhow!("command needs a \"potential\" entry")),
            _ => None,
        };
        let resolve =
            |spec: &Option<crate::config::MeasureSpec>, name: &str, seed: u64| -> Result<_> {
                spec.as_ref()
                    .map(|s| {
                        s.resolve(base_dir, seed)
                            .with_context(|| format!("in {name}"))
                    })
                    .transpose()
            };
        let measure = resolve(&config.measure, "measure", config.seed)?;
        let other_measure = resolve(
            &config.other_measure,
            "other_measure",
            config.seed.wrapping_add(1),
        )?;
        if needs_inputs && measure.is_none() {
            return Err(anyhow!("command needs a \"measure\" entry"));
        }
        if command == Command::Contraction && other_measure.is_none() {
            return Err(anyhow!("contraction needs an \"other_measure\" entry"));
        }
        if let (Some(pot), Some(mu)) = (&potential, &measure) {
            if pot.dimension() != mu.dim() {
                return Err(anyhow!(
                    "potential acts in dimension {} but the measure lives in dimension {}",
                    pot.dimension(),
                    mu.dim()
                ));
            }
        }
        Ok(Self {
            command,
            config,
            potential,
            measure,
            other_measure,
        })
    }

    pub fn run(&self) -> Result<Artifacts> {
        let mut files = Vec::new();
        let results = match self.command {
            Command::Energy => self.energy()?,
            Command::Selection => self.selection()?,
            Command::Simulate => self.simulate(&mut files)?,
            Command::Jko => self.jko(&mut files)?,
            Command::Stationary => self.stationary()?,
            Command::CircleRadius => self.circle()?,
            Command::Pyramid => self.pyramid()?,
            Command::Collapse => self.collapse(&mut files)?,
            Command::Contraction => self.contraction(&mut files)?,
        };
        let mut summary = Map::new();
        summary.insert("command".into(), serde_json::to_value(self.command)?);
        summary.insert("config".into(), serde_json::to_value(&self.config)?);
        if let Some(mu) = &self.measure {
            summary.insert("initial_measure".into(), serde_json::to_value(mu)?);
        }
        if let Value::Object(r) = results {
            summary.extend(r);
        }
        files.push((
            "summary.json".into(),
            to_summary_json(&summary)?.into_bytes(),
        ));
        Ok(Artifacts { files })
    }

    fn pot(&self) -> &Potential {
        self.potential.as_ref().expect("checked in prepare")
    }

    fn mu(&self) -> &ParticleMeasure {
        self.measure.as_ref().expect("checked in prepare")
    }

    fn sim_options(&self) -> SimulationOptions {
        let mut opts = SimulationOptions::new(self.config.dt, self.config.t_end);
        opts.merge_tol = self.config.merge_tol;
        opts.selection = self.config.selection_options();
        opts
    }

    fn energy(&self) -> Result<Value> {
        let (pot, mu) = (self.pot(), self.mu());
        let moreau = self
            .config
            .moreau_n
            .map(|n| moreau_energy(pot, mu, n))
            .transpose()?;
        Ok(json!({
            "energy": interaction_energy(pot, mu)?,
            "moreau_energy": moreau,
        }))
    }

    fn selection(&self) -> Result<Value> {
        let sel = minimal_selection(self.pot(), self.mu(), &self.config.selection_options())?;
        Ok(json!({
            "free_variables": sel.selection.free_variables(),
            "velocities": sel.velocities,
            "objective": sel.objective,
            "slope": sel.slope(),
            "iterations": sel.iterations,
            "qp_residual": sel.residual,
        }))
    }

    fn simulate(&self, files: &mut Vec<(String, Vec<u8>)>) -> Result<Value> {
        let traj = simulate_with(self.pot(), self.mu(), &self.sim_options())?;
        files.push((
            "trajectory.csv".into(),
            trajectory_csv(&traj, self.config.save_stride)?,
        ));
        let last = traj.final_diagnostics();
        Ok(json!({
            "final_time": traj.last_time(),
            "n_frames": traj.len(),
            "stationary": traj.stationary,
            "initial_energy": traj.diagnostics[0].energy,
            "final_energy": last.energy,
            "final_slope": last.slope,
            "energy_identity_residual": energy_identity_report(&traj),
            "merges": merge_events(&traj),
            "final_measure": traj.last_state(),
        }))
    }

    fn jko(&self, files: &mut Vec<(String, Vec<u8>)>) -> Result<Value> {
        let (pot, mu0) = (self.pot(), self.mu());
        let opts = JkoOptions {
            inner_tol: self.config.inner_tol,
            max_iter: aggflow::dynamics::JKO_MAX_ITER,
            selection: self.config.selection_options(),
        };
        let tau = self.config.tau;
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            diagnostics: Vec::new(),
            stationary: false,
        };
        let mut mu = mu0.clone();
        let mut objectives = Vec::new();
        for k in 0..=self.config.steps {
            if k > 0 {
                let next = jko_step_with(pot, &mu, tau, &opts)?;
                let d = wasserstein(&next, &mu)?.0;
                objectives.push(interaction_energy(pot, &next)? + d * d / (2.0 * tau));
                mu = next;
            }
            let sel = minimal_selection(pot, &mu, &opts.selection)?;
            traj.times.push(k as f64 * tau);
            traj.diagnostics.push(StateDiagnostics {
                energy: interaction_energy(pot, &mu)?,
                slope: sel.slope(),
                max_speed: sel
                    .velocities
                    .iter()
                    .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .fold(0.0, f64::max),
                merges: Vec::new(),
            });
            traj.states.push(mu.clone());
        }
        files.push((
            "trajectory.csv".into(),
            trajectory_csv(&traj, self.config.save_stride)?,
        ));
        Ok(json!({
            "tau": tau,
            "steps": self.config.steps,
            "energies": traj.diagnostics.iter().map(|d| d.energy).collect::<Vec<_>>(),
            "objectives": objectives,
            "final_measure": traj.last_state(),
        }))
    }

    fn stationary(&self) -> Result<Value> {
        let mu = self.mu();
        let cert = certify_stationary(self.pot(), mu, self.config.tol)?;
        let vertex = if mu.len() == 3 && mu.dim() == 1 {
            Some(vertex_condition(mu)?)
        } else {
            None
        };
        Ok(json!({
            "residual": cert.residual,
            "ok": cert.ok,
            "tol": self.config.tol,
            "vertex_condition": vertex,
        }))
    }

    fn circle(&self) -> Result<Value> {
        let r0 = circle_radius();
        let residuals = self
            .config
            .circle_atoms
            .iter()
            .map(|&n| circle_residual(n))
            .collect::<aggflow::Result<Vec<_>>>()?;
        Ok(json!({
            "R0": r0,
            "f_at_root": circle_f(r0),
            "bracket": CIRCLE_BRACKET,
            "f_at_bracket": CIRCLE_BRACKET.map(circle_f),
            "residuals": residuals,
        }))
    }

    fn pyramid(&self) -> Result<Value> {
        Ok(serde_json::to_value(pyramid_counterexample(
            self.config.theta,
            self.config.epsilon,
        )?)?)
    }

    fn collapse(&self, files: &mut Vec<(String, Vec<u8>)>) -> Result<Value> {
        let rep = collapse_experiment(
            self.pot(),
            self.mu(),
            self.config.dt,
            self.config.radius_tol,
            self.config.t_max,
        )?;
        let mut csv = String::from("t,radius\n");
        for (k, (t, r)) in rep.times.iter().zip(&rep.radii).enumerate() {
            if k % self.config.save_stride == 0 || k + 1 == rep.times.len() {
                csv.push_str(&format!("{t},{r}\n"));
            }
        }
        files.push(("radius.csv".into(), csv.into_bytes()));
        Ok(json!({
            "collapse_time": rep.collapse_time,
            "final_radius": rep.radii.last(),
            "monotone": rep.monotone,
            "worst_increase": rep.worst_increase,
            "min_slope": rep.min_slope,
            "n_frames": rep.times.len(),
        }))
    }

    fn contraction(&self, files: &mut Vec<(String, Vec<u8>)>) -> Result<Value> {
        let pot = self.pot();
        let opts = self.sim_options();
        let other = self.other_measure.as_ref().expect("checked in prepare");
        let (a, b) = std::thread::scope(|s| {
            let ha = s.spawn(|| simulate_with(pot, self.mu(), &opts));
            let hb = s.spawn(|| simulate_with(pot, other, &opts));
            (
                ha.join().expect("simulation thread panicked"),
                hb.join().expect("simulation thread panicked"),
            )
        });
        let (a, b) = (a?, b?);
        let rep = contraction_report(pot, &a, &b)?;
        let mut csv = String::from("t,distance,bound\n");
        for (k, ((t, d), bound)) in rep
            .times
            .iter()
            .zip(&rep.distances)
            .zip(&rep.bounds)
            .enumerate()
        {
            if k % self.config.save_stride == 0 || k + 1 == rep.times.len() {
                csv.push_str(&format!("{t},{d},{bound}\n"));
            }
        }
        files.push(("contraction.csv".into(), csv.into_bytes()));
        Ok(json!({
            "lambda": pot.lambda(),
            "initial_distance": rep.distances[0],
            "worst_violation": rep.worst_violation,
        }))
    }
}

fn trajectory_csv(traj: &Trajectory, stride: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, traj, stride)?;
    Ok(buf)
}

fn merge_events(traj: &Trajectory) -> Vec<Value> {
    traj.times
        .iter()
        .zip(&traj.diagnostics)
        .flat_map(|(t, d)| {
            d.merges.iter().map(move |g| {
                json!({"t": t, "members": g.members, "position": g.position, "mass": g.mass})
            })
        })
        .collect()
}
