use super::storm::HazardEvent;
use super::table::CountyDayTable;
use crate::error::{Error, Result};
use crate::hazard::{HazardCounts, NUM_HAZARDS};

pub const DEFAULT_FORWARD_WINDOW: usize = 14;

/// Daily one-hot occurrence indicators, one row per table day.
pub fn daily_indicators(table: &CountyDayTable, events: &[HazardEvent]) -> Vec<[bool; NUM_HAZARDS]> {
    let mut ind = vec![[false; NUM_HAZARDS]; table.len()];
    let (Some(&start), Some(&end)) = (table.dates.first(), table.dates.last()) else {
        return ind;
    };
    for e in events {
        let (b, last) = (e.begin_date.max(start), e.end_date.min(end));
        if b > last {
            continue;
        }
        let from = (b - start).num_days() as usize;
        let to = (last - start).num_days() as usize;
        for day in &mut ind[from..=to] {
            day[e.hazard.index()] = true;
        }
    }
    ind
}

/// Sets `targets[d][h]` to the number of indicator days for hazard `h` in
/// `d+1 ..= d+window`. The last `window` days stay unlabeled.
pub fn build_targets(table: &mut CountyDayTable, events: &[HazardEvent], window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::Config("forward window must be at least one day".into()));
    }
    if window >= table.len() {
        return Err(Error::Data(format!(
            "forward window of {window} days leaves no labeled rows in a {}-day table",
            table.len()
        )));
    }
    let ind = daily_indicators(table, events);
    // prefix[k][h] = number of indicator days among 0..k
    let mut prefix = vec![[0u32; NUM_HAZARDS]; ind.len() + 1];
    for (k, day) in ind.iter().enumerate() {
        for h in 0..NUM_HAZARDS {
            prefix[k + 1][h] = prefix[k][h] + u32::from(day[h]);
        }
    }
    let labeled = table.len() - window;
    table.targets = (0..table.len())
        .map(|d| {
            (d < labeled).then(|| {
                let mut t: HazardCounts = [0; NUM_HAZARDS];
                for (h, slot) in t.iter_mut().enumerate() {
                    *slot = prefix[d + window + 1][h] - prefix[d + 1][h];
                }
                t
            })
        })
        .collect();
    table.forward_window = Some(window);
    Ok(())
}
