use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use clap::CommandFactory;
use serde::Serialize;

use clgbn::averaging::{average, AveragingOptions, ThresholdRule};
use clgbn::corrnet::correlation_network;
use clgbn::dataset::{
    adjust_with_atlas, compute_deltas, load_table, write_table, Dataset, ReferenceAtlas,
    TableSchema, TreatmentCoding,
};
use clgbn::graph::{default_constraints, to_dot, Arc, ArcConstraints, Dag, GraphJson};
use clgbn::inference::{expectation, intervene, query, simulate, Evidence, Intervention};
use clgbn::model::{fit_parameters, write_regression_table, ClgNetwork, FitOptions, RegimeCoding};
use clgbn::search::{hill_climb, SearchOptions};
use clgbn::validation::{cross_validate, subgroup_networks, CvOptions, Learner};
use clgbn::{Error, Result};

use crate::{
    Cli, CodingArg, Command, ConstraintArgs, InputArgs, InputFormat, LearnerArg, QuerySpec,
    RegimeArg,
};

#[derive(Serialize)]
struct RunConfig<'a> {
    version: &'static str,
    seed: u64,
    out: &'a Path,
    command: &'a Command,
}

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or_else(|| {
        let s = rand::random();
        log::warn!("no --seed given; using {s}");
        s
    });
    fs::create_dir_all(&cli.out)?;
    let out = Out(&cli.out);
    out.json(
        "run_config.json",
        &RunConfig {
            version: env!("CARGO_PKG_VERSION"),
            seed,
            out: &cli.out,
            command: &cli.command,
        },
    )?;
    match &cli.command {
        Command::Corrnet(a) => {
            let d = load_input(&a.input)?;
            let (g, m) = correlation_network(&d, a.threshold)?;
            m.write_csv(out.file("correlation_matrix.csv")?, delimiter(a.input.delimiter)?)?;
            out.text("correlation_network.dot", &g.to_dot())?;
            out.json("correlation_network.json", &g)
        }
        Command::Learn(a) => {
            let d = load_input(&a.input)?;
            let c = constraints(&d, &a.constraints)?;
            let opts = search_options(&a.constraints);
            let (g, trace) = hill_climb(&d, &c, &opts)?;
            out.json("network.json", &g.to_json(None))?;
            out.text("network.dot", &to_dot(&g, None, Some(&c.whitelist)))?;
            out.text("search_trace.jsonl", &trace.to_json_lines())?;
            let m = fit_parameters(&g, &d, &opts.fit)?;
            out.text("model.json", &m.to_json_string())
        }
        Command::Average(a) => {
            let d = load_input(&a.input)?;
            let c = constraints(&d, &a.constraints)?;
            let opts = AveragingOptions {
                replicates: a.replicates,
                seed,
                threshold: a.threshold.parse()?,
                search: search_options(&a.constraints),
            };
            let avg = average(&d, &c, &opts)?;
            let weights = avg.strengths.weights_for(&avg.dag);
            out.json("consensus.json", &avg.to_json())?;
            out.text("consensus.dot", &to_dot(&avg.dag, Some(&weights), Some(&c.whitelist)))?;
            avg.strengths
                .write_csv(out.file("arc_strengths.csv")?, delimiter(a.input.delimiter)?)?;
            let m = fit_parameters(&avg.dag, &d, &opts.search.fit)?;
            out.text("model.json", &m.to_json_string())?;
            write_regression_table(&m, out.file("regression.csv")?, delimiter(a.input.delimiter)?)
        }
        Command::Fit(a) => {
            let d = load_input(&a.input)?;
            let g = read_graph(&a.graph)?;
            let m = fit_parameters(&g, &d, &FitOptions { coding: regime(a.regime) })?;
            out.text("model.json", &m.to_json_string())?;
            write_regression_table(&m, out.file("regression.csv")?, delimiter(a.input.delimiter)?)
        }
        Command::Query(a) => {
            let m = read_model(&a.model)?;
            if a.query.event.is_none() && a.query.expect.is_none() {
                Cli::command()
                    .error(
                        clap::error::ErrorKind::MissingRequiredArgument,
                        "query needs --event or --expect",
                    )
                    .exit();
            }
            run_query(&m, &a.query, seed, &out)
        }
        Command::Intervene(a) => {
            let m = read_model(&a.model)?;
            let iv = match (a.value, &a.level, a.mean, a.sd) {
                (Some(v), None, None, _) => Intervention::Value(v),
                (None, Some(l), None, _) => Intervention::Level(l.clone()),
                (None, None, Some(mean), Some(sd)) => Intervention::Gaussian { mean, sd },
                _ => Cli::command()
                    .error(
                        clap::error::ErrorKind::MissingRequiredArgument,
                        "intervene needs exactly one of --value, --level, or --mean with --sd",
                    )
                    .exit(),
            };
            let mutilated = intervene(&m, &a.node, &iv)?;
            out.text("intervened_model.json", &mutilated.to_json_string())?;
            if a.query.event.is_some() || a.query.expect.is_some() {
                run_query(&mutilated, &a.query, seed, &out)?;
            }
            Ok(())
        }
        Command::Cv(a) => {
            let d = load_input(&a.input)?;
            let c = constraints(&d, &a.constraints)?;
            let learner = match a.learner {
                LearnerArg::Single => Learner::Single,
                LearnerArg::Averaged => Learner::Averaged {
                    replicates: a.replicates,
                    threshold: a.threshold.parse()?,
                },
                LearnerArg::Fixed => Learner::Fixed(read_graph(
                    a.graph.as_deref().expect("clap requires --graph for the fixed learner"),
                )?),
            };
            let report = cross_validate(
                &d,
                &c,
                &CvOptions {
                    folds: a.folds,
                    seed,
                    learner,
                    search: search_options(&a.constraints),
                },
            )?;
            out.json("cv_report.json", &report)?;
            report.write_summary(out.file("cv_summary.csv")?, delimiter(a.input.delimiter)?)
        }
        Command::Subgroups(a) => {
            let d = load_input(&a.input)?;
            let c = constraints(&d, &a.constraints)?;
            let opts = AveragingOptions {
                replicates: a.replicates,
                seed,
                threshold: a.threshold.parse::<ThresholdRule>()?,
                search: search_options(&a.constraints),
            };
            for (level, avg) in subgroup_networks(&d, &a.by, &c, &opts)? {
                let stem = format!("subgroup_{}", file_safe(&level));
                let weights = avg.strengths.weights_for(&avg.dag);
                out.json(&format!("{stem}.json"), &avg.to_json())?;
                out.text(
                    &format!("{stem}.dot"),
                    &to_dot(&avg.dag, Some(&weights), Some(&c.whitelist)),
                )?;
                avg.strengths.write_csv(
                    out.file(&format!("{stem}_strengths.csv"))?,
                    delimiter(a.input.delimiter)?,
                )?;
            }
            Ok(())
        }
        Command::Adjust(a) => {
            let delim = delimiter(a.delimiter)?;
            let table = load_table(
                open(&a.input)?,
                &TableSchema {
                    delimiter: delim,
                    ..TableSchema::default()
                },
            )?;
            let atlas = ReferenceAtlas::read_csv(open(&a.atlas)?, delim)?;
            write_table(&adjust_with_atlas(&table, &atlas)?, out.file("adjusted.csv")?, delim)
        }
        Command::Simulate(a) => {
            let m = read_model(&a.model)?;
            let d = simulate(&m, a.rows, seed)?;
            d.write_csv(out.file("simulated.csv")?, delimiter(a.delimiter)?)
        }
    }
}

/// Output sink confined to one directory.
struct Out<'a>(&'a Path);

impl Out<'_> {
    fn path(&self, name: &str) -> Result<std::path::PathBuf> {
        if name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(Error::InvalidArgument(format!("bad output name `{name}`")));
        }
        Ok(self.0.join(name))
    }

    fn file(&self, name: &str) -> Result<File> {
        Ok(File::create(self.path(name)?)?)
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.path(name)?, body)?;
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn delimiter(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::InvalidArgument(format!("delimiter must be one ASCII character, got `{c}`")))
}

fn load_input(a: &InputArgs) -> Result<Dataset> {
    let delim = delimiter(a.delimiter)?;
    match a.format {
        InputFormat::Longitudinal => {
            let mut table = load_table(
                open(&a.input)?,
                &TableSchema {
                    delimiter: delim,
                    ..TableSchema::default()
                },
            )?;
            if let Some(path) = &a.atlas {
                let atlas = ReferenceAtlas::read_csv(open(path)?, delim)?;
                table = adjust_with_atlas(&table, &atlas)?;
            }
            let coding = match a.treatment_coding {
                CodingArg::Binary => TreatmentCoding::Binary,
                CodingArg::ThreeLevel => TreatmentCoding::ThreeLevel,
            };
            Ok(compute_deltas(&table, coding))
        }
        InputFormat::Deltas => {
            if a.atlas.is_some() {
                return Err(Error::InvalidArgument(
                    "--atlas applies to longitudinal input only".into(),
                ));
            }
            Dataset::read_csv(open(&a.input)?, delim, None)
        }
    }
}

fn regime(r: RegimeArg) -> RegimeCoding {
    match r {
        RegimeArg::Blocks => RegimeCoding::Blocks,
        RegimeArg::Indicators => RegimeCoding::Indicators,
    }
}

fn search_options(a: &ConstraintArgs) -> SearchOptions {
    SearchOptions {
        allow_reversals: !a.no_reversals,
        fit: FitOptions { coding: regime(a.regime) },
    }
}

fn constraints(d: &Dataset, a: &ConstraintArgs) -> Result<ArcConstraints> {
    let names = d.names();
    let base = if a.no_default_constraints {
        ArcConstraints::default()
    } else {
        match default_constraints(&names) {
            Ok(c) => c,
            Err(Error::UnknownVariable(v)) => {
                log::warn!("column `{v}` absent; built-in constraints not applied");
                ArcConstraints::default()
            }
            Err(e) => return Err(e),
        }
    };
    let parse = |v: &[String]| v.iter().map(|s| s.parse::<Arc>()).collect::<Result<Vec<_>>>();
    let c = base.extended(parse(&a.whitelist)?, parse(&a.blacklist)?)?;
    c.validate(&names)?;
    Ok(c)
}

fn read_graph(path: &Path) -> Result<Dag> {
    let json: GraphJson = serde_json::from_reader(open(path)?)?;
    Dag::from_json(&json)
}

fn read_model(path: &Path) -> Result<ClgNetwork> {
    ClgNetwork::from_json_str(&fs::read_to_string(path)?)
}

#[derive(Serialize)]
struct QueryOutput<'a, R: Serialize> {
    kind: &'static str,
    event: Option<&'a str>,
    target: Option<&'a str>,
    evidence: &'a str,
    epsilon: f64,
    seed: u64,
    result: R,
}

fn run_query(m: &ClgNetwork, q: &QuerySpec, seed: u64, out: &Out) -> Result<()> {
    let evidence = Evidence::parse(&q.evidence, q.epsilon)?;
    if let Some(target) = &q.expect {
        let result = expectation(m, target, &evidence, q.samples, seed)?;
        return out.json(
            "query.json",
            &QueryOutput {
                kind: "expectation",
                event: None,
                target: Some(target),
                evidence: &q.evidence,
                epsilon: q.epsilon,
                seed,
                result,
            },
        );
    }
    let event_text = q.event.as_deref().unwrap_or_default();
    let event = Evidence::parse(event_text, q.epsilon)?;
    if event.is_empty() {
        return Err(Error::InvalidEvidence("empty event".into()));
    }
    let result = query(m, &event, &evidence, q.samples, seed)?;
    out.json(
        "query.json",
        &QueryOutput {
            kind: "probability",
            event: Some(event_text),
            target: None,
            evidence: &q.evidence,
            epsilon: q.epsilon,
            seed,
            result,
        },
    )
}
