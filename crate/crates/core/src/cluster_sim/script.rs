//! Closed-verb command language executed inside the simulated cluster.
//!
//! Statements are separated by newlines or `;`, `#` starts a comment.
//! `$input` substitutes the caller-provided input. Verbs:
//!
//! ```text
//! read <metric> [all|<device>]          one "<device> <metric> <value>" line per device
//! find <metric> below|above <number>    ids of matching devices, one per line
//! set_frequency <gpu> <mhz>             lifts a throttle; never above nominal
//! clear_fault <fault-id>
//! restart_job <job-id>
//! wait <seconds>
//! print <text>
//! ```
//!
//! GPU metrics: `freq`, `power`, `ecc`, `util`. Server metrics: `link`,
//! `storage`, `memory`.

use serde::{Deserialize, Serialize};

use super::{Cluster, FaultId};

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Compile { line: usize, message: String },
    #[error("line {line}: {message}")]
    Runtime { line: usize, message: String },
    #[error("script exceeded its budget ({reason})")]
    Timeout { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptLimits {
    pub max_steps: usize,
    /// Simulated seconds a script may consume.
    pub max_sim_seconds: f64,
}

impl Default for ScriptLimits {
    fn default() -> Self {
        Self {
            max_steps: 1000,
            max_sim_seconds: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Freq,
    Power,
    Ecc,
    Util,
    Link,
    Storage,
    Memory,
}

impl Metric {
    fn parse(word: &str) -> Option<Self> {
        Some(match word {
            "freq" => Metric::Freq,
            "power" => Metric::Power,
            "ecc" => Metric::Ecc,
            "util" => Metric::Util,
            "link" => Metric::Link,
            "storage" => Metric::Storage,
            "memory" => Metric::Memory,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Metric::Freq => "freq",
            Metric::Power => "power",
            Metric::Ecc => "ecc",
            Metric::Util => "util",
            Metric::Link => "link",
            Metric::Storage => "storage",
            Metric::Memory => "memory",
        }
    }

    fn on_gpu(self) -> bool {
        matches!(self, Metric::Freq | Metric::Power | Metric::Ecc | Metric::Util)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Word {
    Literal(String),
    Input,
}

impl Word {
    fn parse(word: &str) -> Self {
        if word == "$input" {
            Word::Input
        } else {
            Word::Literal(word.to_string())
        }
    }

    fn resolve<'a>(&'a self, input: &'a str) -> &'a str {
        match self {
            Word::Literal(s) => s,
            Word::Input => input.trim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Statement {
    Read { metric: Metric, target: Option<Word> },
    Find { metric: Metric, below: bool, bound: Word },
    SetFrequency { gpu: Word, mhz: Word },
    ClearFault { id: Word },
    RestartJob { id: Word },
    Wait { seconds: Word },
    Print { text: String },
}

/// A compiled script.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    statements: Vec<(usize, Statement)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptOutput {
    pub lines: Vec<String>,
    /// Verbs that changed cluster state, in execution order.
    pub mutations: Vec<String>,
}

impl ScriptOutput {
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }
}

fn number_word(word: &str, line: usize) -> Result<Word, ScriptError> {
    let parsed = Word::parse(word);
    if let Word::Literal(text) = &parsed {
        if text.parse::<f64>().is_err() {
            return Err(ScriptError::Compile {
                line,
                message: format!("expected a number or $input, found {text:?}"),
            });
        }
    }
    Ok(parsed)
}

pub fn compile(source: &str) -> Result<Program, ScriptError> {
    let mut statements = Vec::new();
    for (index, raw_line) in source.lines().enumerate() {
        let line = index + 1;
        let code = raw_line.split('#').next().unwrap_or("");
        for piece in code.split(';') {
            let words: Vec<&str> = piece.split_whitespace().collect();
            let Some((verb, args)) = words.split_first() else {
                continue;
            };
            let err = |message: String| ScriptError::Compile { line, message };
            let arity = |n: usize| {
                if args.len() == n {
                    Ok(())
                } else {
                    Err(err(format!("{verb} takes {n} argument(s), got {}", args.len())))
                }
            };
            let metric = |word: &str| Metric::parse(word).ok_or_else(|| err(format!("unknown metric {word:?}")));
            let statement = match *verb {
                "read" => {
                    if args.is_empty() || args.len() > 2 {
                        return Err(err("read takes a metric and an optional target".into()));
                    }
                    Statement::Read {
                        metric: metric(args[0])?,
                        target: args.get(1).filter(|w| **w != "all").map(|w| Word::parse(w)),
                    }
                }
                "find" => {
                    arity(3)?;
                    let below = match args[1] {
                        "below" => true,
                        "above" => false,
                        other => return Err(err(format!("expected below|above, found {other:?}"))),
                    };
                    Statement::Find {
                        metric: metric(args[0])?,
                        below,
                        bound: number_word(args[2], line)?,
                    }
                }
                "set_frequency" => {
                    arity(2)?;
                    Statement::SetFrequency {
                        gpu: Word::parse(args[0]),
                        mhz: number_word(args[1], line)?,
                    }
                }
                "clear_fault" => {
                    arity(1)?;
                    Statement::ClearFault {
                        id: number_word(args[0], line)?,
                    }
                }
                "restart_job" => {
                    arity(1)?;
                    Statement::RestartJob { id: Word::parse(args[0]) }
                }
                "wait" => {
                    arity(1)?;
                    Statement::Wait {
                        seconds: number_word(args[0], line)?,
                    }
                }
                "print" => Statement::Print { text: args.join(" ") },
                other => return Err(err(format!("unknown verb {other:?}"))),
            };
            statements.push((line, statement));
        }
    }
    if statements.is_empty() {
        return Err(ScriptError::Compile {
            line: 0,
            message: "empty program".into(),
        });
    }
    Ok(Program { statements })
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl Program {
    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// True when the program only reads state.
    pub fn is_read_only(&self) -> bool {
        self.statements
            .iter()
            .all(|(_, s)| matches!(s, Statement::Read { .. } | Statement::Find { .. } | Statement::Print { .. }))
    }

    pub fn run(&self, cluster: &mut Cluster, input: &str, limits: ScriptLimits) -> Result<ScriptOutput, ScriptError> {
        let started = cluster.now();
        let mut out = ScriptOutput::default();
        for (step, (line, statement)) in self.statements.iter().enumerate() {
            if step >= limits.max_steps {
                return Err(ScriptError::Timeout {
                    reason: format!("more than {} steps", limits.max_steps),
                });
            }
            let line = *line;
            let runtime = |message: String| ScriptError::Runtime { line, message };
            let number = |word: &Word| -> Result<f64, ScriptError> {
                let text = word.resolve(input);
                text.parse::<f64>()
                    .map_err(|_| runtime(format!("{text:?} is not a number")))
            };
            match statement {
                Statement::Read { metric, target } => {
                    let devices = self.devices(cluster, *metric, target.as_ref().map(|w| w.resolve(input)), line)?;
                    for device in devices {
                        let value = read_metric(cluster, *metric, &device);
                        out.lines.push(format!("{device} {} {}", metric.name(), fmt_num(value)));
                    }
                }
                Statement::Find { metric, below, bound } => {
                    let bound = number(bound)?;
                    for device in self.devices(cluster, *metric, None, line)? {
                        let value = read_metric(cluster, *metric, &device);
                        if (*below && value < bound) || (!*below && value > bound) {
                            out.lines.push(device);
                        }
                    }
                }
                Statement::SetFrequency { gpu, mhz } => {
                    let gpu = gpu.resolve(input).to_string();
                    let mhz = number(mhz)?;
                    cluster
                        .set_frequency(&gpu, mhz)
                        .map_err(|e| runtime(e.to_string()))?;
                    out.lines.push(format!("{gpu} frequency set to {}", fmt_num(mhz)));
                    out.mutations.push(format!("set_frequency {gpu} {}", fmt_num(mhz)));
                }
                Statement::ClearFault { id } => {
                    let id = number(id)?;
                    let fault = cluster
                        .clear_fault(FaultId(id as u64))
                        .map_err(|e| runtime(e.to_string()))?;
                    out.lines.push(format!("fault {} cleared on {}", id as u64, fault.target));
                    out.mutations.push(format!("clear_fault {}", id as u64));
                }
                Statement::RestartJob { id } => {
                    let id = id.resolve(input).to_string();
                    let log = cluster.restart_job(&id).map_err(|e| runtime(e.to_string()))?;
                    let rate = log.mean_rate().unwrap_or(0.0);
                    out.lines.push(format!("job {id} restarted: {rate:.4} it/s"));
                    out.mutations.push(format!("restart_job {id}"));
                }
                Statement::Wait { seconds } => {
                    let seconds = number(seconds)?;
                    if seconds < 0.0 {
                        return Err(runtime("wait needs a non-negative duration".into()));
                    }
                    cluster.advance(seconds);
                }
                Statement::Print { text } => out.lines.push(text.replace("$input", input.trim())),
            }
            if cluster.now() - started > limits.max_sim_seconds {
                return Err(ScriptError::Timeout {
                    reason: format!("more than {} simulated seconds", limits.max_sim_seconds),
                });
            }
        }
        Ok(out)
    }

    fn devices(&self, cluster: &Cluster, metric: Metric, target: Option<&str>, line: usize) -> Result<Vec<String>, ScriptError> {
        let topology = cluster.topology();
        let all: Vec<String> = if metric.on_gpu() {
            topology.gpu_ids()
        } else {
            topology.servers.iter().map(|s| s.id.clone()).collect()
        };
        match target {
            None => Ok(all),
            Some(id) if all.iter().any(|d| d == id) => Ok(vec![id.to_string()]),
            Some(id) => Err(ScriptError::Runtime {
                line,
                message: format!("no device {id:?} carries metric {}", metric.name()),
            }),
        }
    }
}

fn read_metric(cluster: &Cluster, metric: Metric, device: &str) -> f64 {
    let state = cluster.device_state();
    match metric {
        Metric::Freq => state.gpus[device].frequency_mhz,
        Metric::Power => state.gpus[device].power_w,
        Metric::Ecc => state.gpus[device].ecc_errors as f64,
        Metric::Util => state.gpus[device].utilization,
        Metric::Link => state.servers[device].link_bytes_per_s,
        Metric::Storage => state.servers[device].free_storage_bytes,
        Metric::Memory => state.servers[device].free_host_memory_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster_sim::{ClusterTopology, FaultSpec};

    fn cluster() -> Cluster {
        let mut c = Cluster::build(ClusterTopology::single_server(4), 0).unwrap();
        c.inject_fault(FaultSpec::throttle("gpu-2", 200.0)).unwrap();
        c
    }

    #[test]
    fn read_and_find() {
        let mut c = cluster();
        let out = compile("read freq gpu-2\nfind freq below $input")
            .unwrap()
            .run(&mut c, "1000", ScriptLimits::default())
            .unwrap();
        assert_eq!(out.text(), "gpu-2 freq 200\ngpu-2");
        let out = compile("read freq").unwrap().run(&mut c, "", ScriptLimits::default()).unwrap();
        assert_eq!(out.lines.len(), 4);
    }

    #[test]
    fn compile_errors_carry_line() {
        assert_eq!(
            compile("read freq\nrm -rf /"),
            Err(ScriptError::Compile { line: 2, message: "unknown verb \"rm\"".into() })
        );
        assert!(matches!(compile("find freq near 3"), Err(ScriptError::Compile { line: 1, .. })));
        assert!(matches!(compile("   \n# nothing"), Err(ScriptError::Compile { .. })));
        assert!(matches!(compile("set_frequency gpu-1 fast"), Err(ScriptError::Compile { .. })));
    }

    #[test]
    fn remediation_and_overclock_guard() {
        let mut c = cluster();
        let program = compile("set_frequency gpu-2 1410; read freq gpu-2").unwrap();
        assert!(!program.is_read_only());
        let out = program.run(&mut c, "", ScriptLimits::default()).unwrap();
        assert_eq!(out.lines[1], "gpu-2 freq 1410");
        assert_eq!(out.mutations, vec!["set_frequency gpu-2 1410"]);
        let err = compile("set_frequency gpu-2 3000").unwrap().run(&mut c, "", ScriptLimits::default());
        assert!(matches!(err, Err(ScriptError::Runtime { line: 1, .. })));
    }

    #[test]
    fn budget_is_enforced() {
        let mut c = cluster();
        let slow = compile("wait 400\nwait 400").unwrap();
        assert!(matches!(slow.run(&mut c, "", ScriptLimits::default()), Err(ScriptError::Timeout { .. })));
        let long = compile(&"print x\n".repeat(5)).unwrap();
        let tight = ScriptLimits { max_steps: 3, ..ScriptLimits::default() };
        assert!(matches!(long.run(&mut c, "", tight), Err(ScriptError::Timeout { .. })));
    }
}
