use std::io::{BufRead, Write};

use anyhow::Result;
use chrono::Utc;
use clap::Args;
use serde_json::json;
use strataeval::corpus::context_window;
use strataeval::{PosClass, Study, StudyError, Verdict};

use crate::{load_study, save_study, Out, StudyPath};

#[derive(Args)]
pub struct JudgeArgs {
    #[command(flatten)]
    path: StudyPath,
    /// Who is judging; recorded with every verdict.
    #[arg(long, env = "STRATAEVAL_JUDGE")]
    judge: String,
    /// Judge this single item instead of prompting.
    #[arg(long, requires = "verdict")]
    item: Option<usize>,
    /// Verdict for --item: c, w or n.
    #[arg(long, requires = "item")]
    verdict: Option<Verdict>,
    /// Only prompt for items of this stratum.
    #[arg(long)]
    stratum: Option<PosClass>,
}

pub fn run(out: &Out, args: JudgeArgs) -> Result<()> {
    let mut study = load_study(&args.path)?;
    if let (Some(index), Some(verdict)) = (args.item, args.verdict) {
        study.record_judgment(index, verdict, &args.judge, Utc::now())?;
        save_study(&study, &args.path.study)?;
        let j = &study.judgments()[&index];
        return out.emit(j, || format!("item {index}: {} ({})\n", j.verdict, j.judge_id));
    }
    let stdin = std::io::stdin();
    let judged = prompt_loop(&mut study, &args, &mut stdin.lock(), &mut std::io::stderr())?;
    let remaining = study.unjudged_items().len();
    let value = json!({ "phase": study.phase(), "judged": judged, "remaining": remaining });
    out.emit(&value, || format!("judged {judged}, {remaining} remaining\n"))
}

fn show(study: &Study, index: usize, term: &mut impl Write) -> Result<()> {
    let corpus = study.corpus();
    let record = corpus.get(index).expect("drawn item exists");
    let class = study.drawn_class(index).expect("item is drawn");
    let progress = study
        .progress()
        .into_iter()
        .find(|p| p.class == class)
        .expect("stratum");
    let context: Vec<String> = context_window(corpus, index, study.config().context_radius)?
        .into_iter()
        .map(|t| {
            if t.is_center {
                format!("[[{}]]", t.record.surface)
            } else {
                t.record.surface.clone()
            }
        })
        .collect();
    writeln!(term)?;
    writeln!(
        term,
        "{} {}/{}  item {index}  tag {}",
        class.as_str(),
        progress.judged + 1,
        progress.drawn,
        record.tag
    )?;
    writeln!(term, "  {}", context.join(" "))?;
    writeln!(
        term,
        "  system lemma: {}",
        record.system_lemma.as_deref().unwrap_or("(none)")
    )?;
    if let Some(gold) = &record.gold_lemma {
        writeln!(term, "  gold lemma:   {gold}")?;
    }
    Ok(())
}

/// Prompts for each unjudged item until the draw is exhausted, the input
/// ends, or the judge quits. Saves after every verdict.
fn prompt_loop(study: &mut Study, args: &JudgeArgs, input: &mut impl BufRead, term: &mut impl Write) -> Result<usize> {
    let mut judged = 0;
    let mut line = String::new();
    while let Some(index) = study.next_unjudged(args.stratum) {
        show(study, index, term)?;
        loop {
            write!(term, "[c]orrect  [w]rong  [n]o output  [q]uit > ")?;
            term.flush()?;
            line.clear();
            if input.read_line(&mut line)? == 0 {
                writeln!(term)?;
                return Ok(judged);
            }
            let key = line.trim();
            if key.eq_ignore_ascii_case("q") {
                return Ok(judged);
            }
            let Ok(verdict) = key.parse::<Verdict>() else {
                writeln!(term, "  unknown key '{key}'")?;
                continue;
            };
            match study.record_judgment(index, verdict, &args.judge, Utc::now()) {
                Ok(()) => {
                    save_study(study, &args.path.study)?;
                    judged += 1;
                    break;
                }
                Err(e @ StudyError::InconsistentVerdict { .. }) => writeln!(term, "  rejected: {e}")?,
                Err(e) => return Err(e.into()),
            }
        }
    }
    writeln!(term, "no unjudged items left in this draw")?;
    Ok(judged)
}
