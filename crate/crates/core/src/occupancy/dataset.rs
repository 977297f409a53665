//! Episode storage and the line-delimited dataset format.
//!
//! ```text
//! dvf-dataset v1 state_dim=<n> action_dim=<m> rewards=<0|1>
//! <episode_id>\t<policy_id>\t<t>\t<state>[\t<action>][\t<reward>]\t<done>
//! ...
//! ```
//!
//! One line per visited state, so an episode with `H` transitions has `H + 1`
//! lines. Vector fields are space-separated reals. The action column is absent
//! when `action_dim = 0` and the reward column when `rewards = 0`. On the final
//! state of an episode (which has no outgoing transition) both are written as
//! `-` and `done` is `1`; every other line has `done = 0`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "dvf-dataset";
pub const DATASET_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode_id: u64,
    pub policy_id: u32,
    pub states: Vec<Vec<f64>>,
    pub actions: Option<Vec<Vec<f64>>>,
    pub rewards: Option<Vec<f64>>,
}

impl EpisodeRecord {
    pub fn new(
        episode_id: u64,
        policy_id: u32,
        states: Vec<Vec<f64>>,
        actions: Option<Vec<Vec<f64>>>,
        rewards: Option<Vec<f64>>,
    ) -> Result<Self> {
        let ep = Self {
            episode_id,
            policy_id,
            states,
            actions,
            rewards,
        };
        ep.validate()?;
        Ok(ep)
    }

    /// Number of transitions `H`.
    pub fn len(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |what: &str| format!("episode {} {what}", self.episode_id);
        if self.states.len() < 2 {
            return Err(Error::shape(ctx("state count (minimum)"), 2, self.states.len()));
        }
        let dim = self.states[0].len();
        if let Some(s) = self.states.iter().find(|s| s.len() != dim) {
            return Err(Error::shape(ctx("state width"), dim, s.len()));
        }
        if let Some(actions) = &self.actions {
            if actions.len() != self.len() {
                return Err(Error::shape(ctx("action count"), self.len(), actions.len()));
            }
        }
        if let Some(rewards) = &self.rewards {
            if rewards.len() != self.len() {
                return Err(Error::shape(ctx("reward count"), self.len(), rewards.len()));
            }
            if rewards.iter().any(|r| !r.is_finite()) {
                return Err(Error::NonFinite(ctx("reward")));
            }
        }
        Ok(())
    }

    /// Drops action and reward labels.
    pub fn states_only(&self) -> Self {
        Self {
            actions: None,
            rewards: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub state_dim: usize,
    /// Zero when the dataset carries no actions.
    pub action_dim: usize,
    pub has_rewards: bool,
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn new(episodes: Vec<EpisodeRecord>) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or_else(|| Error::Config("dataset has no episodes".into()))?;
        let state_dim = first.states[0].len();
        let action_dim = first
            .actions
            .as_ref()
            .map(|a| a.first().map_or(0, Vec::len))
            .unwrap_or(0);
        let has_rewards = first.rewards.is_some();
        for ep in &episodes {
            ep.validate()?;
            if ep.states[0].len() != state_dim {
                return Err(Error::shape(
                    format!("episode {} state width", ep.episode_id),
                    state_dim,
                    ep.states[0].len(),
                ));
            }
            let adim = ep.actions.as_ref().map(|a| a.first().map_or(0, Vec::len)).unwrap_or(0);
            if adim != action_dim || ep.actions.as_ref().is_some_and(|a| a.iter().any(|x| x.len() != adim)) {
                return Err(Error::shape(
                    format!("episode {} action width", ep.episode_id),
                    action_dim,
                    adim,
                ));
            }
            if ep.rewards.is_some() != has_rewards {
                return Err(Error::Config(format!(
                    "episode {} reward labels inconsistent with dataset",
                    ep.episode_id
                )));
            }
        }
        Ok(Self {
            state_dim,
            action_dim,
            has_rewards,
            episodes,
        })
    }

    pub fn has_actions(&self) -> bool {
        self.action_dim > 0
    }

    /// Total number of transitions.
    pub fn transitions(&self) -> usize {
        self.episodes.iter().map(EpisodeRecord::len).sum()
    }

    pub fn policy_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.episodes.iter().map(|e| e.policy_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn states_only(&self) -> Self {
        Self {
            state_dim: self.state_dim,
            action_dim: 0,
            has_rewards: false,
            episodes: self.episodes.iter().map(EpisodeRecord::states_only).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{DATASET_MAGIC} {DATASET_VERSION} state_dim={} action_dim={} rewards={}",
            self.state_dim,
            self.action_dim,
            self.has_rewards as u8
        );
        for ep in &self.episodes {
            let h = ep.len();
            for (t, state) in ep.states.iter().enumerate() {
                let _ = write!(out, "{}\t{}\t{}\t", ep.episode_id, ep.policy_id, t);
                push_vec(&mut out, state);
                if self.action_dim > 0 {
                    out.push('\t');
                    match ep.actions.as_ref().and_then(|a| a.get(t)) {
                        Some(a) => push_vec(&mut out, a),
                        None => out.push('-'),
                    }
                }
                if self.has_rewards {
                    out.push('\t');
                    match ep.rewards.as_ref().and_then(|r| r.get(t)) {
                        Some(r) => {
                            let _ = write!(out, "{r}");
                        }
                        None => out.push('-'),
                    }
                }
                let _ = writeln!(out, "\t{}", (t == h) as u8);
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_text().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = Vec::new();
        for line in reader.lines() {
            lines.push(line.map_err(|e| Error::io(path, e))?);
        }
        Self::parse_lines(path, lines.iter().map(String::as_str))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_lines(Path::new("<memory>"), text.lines())
    }

    fn parse_lines<'a>(path: &Path, mut lines: impl Iterator<Item = &'a str>) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
        let (state_dim, action_dim, has_rewards) = parse_header(header).map_err(|m| perr(1, m))?;

        let mut episodes: Vec<EpisodeRecord> = Vec::new();
        let mut current: Option<(u64, u32, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, bool)> = None;

        let expected_fields = 5 + (action_dim > 0) as usize + has_rewards as usize;
        for (idx, raw) in lines.enumerate() {
            let line_no = idx + 2;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != expected_fields {
                return Err(perr(
                    line_no,
                    format!("expected {expected_fields} fields, found {}", fields.len()),
                ));
            }
            let episode_id: u64 = fields[0].parse().map_err(|_| perr(line_no, "bad episode_id".into()))?;
            let policy_id: u32 = fields[1].parse().map_err(|_| perr(line_no, "bad policy_id".into()))?;
            let t: usize = fields[2].parse().map_err(|_| perr(line_no, "bad t".into()))?;
            let state = parse_vec(fields[3], state_dim).map_err(|m| perr(line_no, format!("state: {m}")))?;
            let mut col = 4;
            let action = if action_dim > 0 {
                col += 1;
                match fields[col - 1] {
                    "-" => None,
                    s => Some(parse_vec(s, action_dim).map_err(|m| perr(line_no, format!("action: {m}")))?),
                }
            } else {
                None
            };
            let reward = if has_rewards {
                col += 1;
                match fields[col - 1] {
                    "-" => None,
                    s => Some(parse_real(s).map_err(|m| perr(line_no, format!("reward: {m}")))?),
                }
            } else {
                None
            };
            let done = match fields[col] {
                "0" => false,
                "1" => true,
                other => return Err(perr(line_no, format!("bad done flag {other:?}"))),
            };

            if t == 0 {
                if let Some(c) = &current {
                    if !c.5 {
                        return Err(perr(line_no, format!("episode {} ended without done flag", c.0)));
                    }
                }
                current = Some((episode_id, policy_id, Vec::new(), Vec::new(), Vec::new(), false));
            }
            let Some(cur) = current.as_mut() else {
                return Err(perr(line_no, "episode does not start at t = 0".into()));
            };
            if cur.5 {
                return Err(perr(line_no, format!("episode {} continues after done", cur.0)));
            }
            if cur.0 != episode_id || cur.1 != policy_id || cur.2.len() != t {
                return Err(perr(line_no, "non-contiguous episode record".into()));
            }
            cur.2.push(state);
            if done {
                if action.is_some() || reward.is_some() {
                    return Err(perr(line_no, "final state must not carry action or reward".into()));
                }
                cur.5 = true;
                let (id, pid, states, actions, rewards, _) = current.take().expect("current episode");
                episodes.push(EpisodeRecord::new(
                    id,
                    pid,
                    states,
                    (action_dim > 0).then_some(actions),
                    has_rewards.then_some(rewards),
                )?);
            } else {
                if action_dim > 0 {
                    cur.3.push(action.ok_or_else(|| perr(line_no, "missing action".into()))?);
                }
                if has_rewards {
                    cur.4.push(reward.ok_or_else(|| perr(line_no, "missing reward".into()))?);
                }
            }
        }
        if let Some(c) = current {
            return Err(perr(0, format!("episode {} truncated (no done flag)", c.0)));
        }
        let ds = Dataset::new(episodes)?;
        if ds.state_dim != state_dim {
            return Err(perr(1, "header state_dim disagrees with records".into()));
        }
        Ok(Dataset {
            action_dim,
            has_rewards,
            ..ds
        })
    }
}

fn push_vec(out: &mut String, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x}");
    }
}

fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad real {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value {s:?}"));
    }
    Ok(v)
}

fn parse_vec(s: &str, dim: usize) -> std::result::Result<Vec<f64>, String> {
    let v = s.split(' ').map(parse_real).collect::<std::result::Result<Vec<_>, _>>()?;
    if v.len() != dim {
        return Err(format!("expected {dim} values, found {}", v.len()));
    }
    Ok(v)
}

fn parse_header(line: &str) -> std::result::Result<(usize, usize, bool), String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(DATASET_MAGIC) {
        return Err(format!("header must start with {DATASET_MAGIC:?}"));
    }
    if parts.next() != Some(DATASET_VERSION) {
        return Err("unsupported dataset version".into());
    }
    let mut state_dim = None;
    let mut action_dim = None;
    let mut rewards = None;
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad header field {kv:?}"))?;
        match k {
            "state_dim" => state_dim = Some(v.parse::<usize>().map_err(|_| "bad state_dim")?),
            "action_dim" => action_dim = Some(v.parse::<usize>().map_err(|_| "bad action_dim")?),
            "rewards" => {
                rewards = Some(match v {
                    "0" => false,
                    "1" => true,
                    _ => return Err("rewards must be 0 or 1".into()),
                })
            }
            _ => return Err(format!("unknown header field {k:?}")),
        }
    }
    let state_dim = state_dim.ok_or("missing state_dim")?;
    if state_dim == 0 {
        return Err("state_dim must be positive".into());
    }
    Ok((
        state_dim,
        action_dim.ok_or("missing action_dim")?,
        rewards.ok_or("missing rewards")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let e0 = EpisodeRecord::new(
            0,
            2,
            vec![vec![0.0, 1.0], vec![0.5, -0.25], vec![1.0, 0.1]],
            Some(vec![vec![0.3], vec![-1.0]]),
            Some(vec![-0.009, 100.0]),
        )
        .unwrap();
        let e1 = EpisodeRecord::new(
            1,
            0,
            vec![vec![2.0, 2.0], vec![1e-7, -3.5]],
            Some(vec![vec![1.0]]),
            Some(vec![0.0]),
        )
        .unwrap();
        Dataset::new(vec![e0, e1]).unwrap()
    }

    #[test]
    fn text_round_trip() {
        let ds = sample();
        let text = ds.to_text();
        assert_eq!(Dataset::parse(&text).unwrap(), ds);
        // one line per state plus the header
        assert_eq!(text.lines().count(), 1 + 3 + 2);
        assert!(text.starts_with("dvf-dataset v1 state_dim=2 action_dim=1 rewards=1\n"));
    }

    #[test]
    fn action_free_export_has_no_action_fields() {
        let ds = sample().states_only();
        let text = ds.to_text();
        assert!(text.starts_with("dvf-dataset v1 state_dim=2 action_dim=0 rewards=0\n"));
        for line in text.lines().skip(1) {
            assert_eq!(line.split('\t').count(), 5);
        }
        let back = Dataset::parse(&text).unwrap();
        assert!(back.episodes.iter().all(|e| e.actions.is_none() && e.rewards.is_none()));
    }

    #[test]
    fn episode_invariants() {
        assert!(EpisodeRecord::new(0, 0, vec![vec![1.0]], None, None).is_err());
        assert!(EpisodeRecord::new(0, 0, vec![vec![1.0], vec![2.0]], Some(vec![]), None).is_err());
        assert!(EpisodeRecord::new(0, 0, vec![vec![1.0], vec![2.0]], None, Some(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "dvf-dataset v1 state_dim=1 action_dim=0 rewards=0\n0\t0\t0\t1.0\t0\n0\t0\t1\tnope\t1\n";
        match Dataset::parse(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let truncated = "dvf-dataset v1 state_dim=1 action_dim=0 rewards=0\n0\t0\t0\t1.0\t0\n";
        assert!(Dataset::parse(truncated).is_err());
        assert!(Dataset::parse("garbage\n").is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(Dataset::new(vec![]).is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = Dataset::read(Path::new("/nonexistent/dir/data.tsv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/data.tsv"));
    }
}
