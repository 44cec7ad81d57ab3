//! Greedy earliest-completion brokerage.

use crate::jedi::JobDefinition;

/// Site capacity as the broker sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokerSite {
    pub site_id: String,
    pub speed_factor: f64,
    pub free_cores: u32,
}

/// Assigns ready jobs to sites: jobs in descending estimated CPU each go
/// to the free-core site minimizing estimated completion time
/// (`now + est_cpu / speed_factor`). Ties break on site order, so the
/// result is deterministic given input order. Jobs that find no free core
/// are left out and remain queued.
pub fn broker_assign(
    ready: &[JobDefinition],
    sites: &mut [BrokerSite],
    now: f64,
) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..ready.len()).collect();
    order.sort_by(|&a, &b| {
        ready[b]
            .est_cpu
            .total_cmp(&ready[a].est_cpu)
            .then(a.cmp(&b))
    });

    let mut assignments = Vec::new();
    for job_idx in order {
        let est = ready[job_idx].est_cpu;
        let best = sites
            .iter()
            .enumerate()
            .filter(|(_, s)| s.free_cores > 0)
            .min_by(|(_, a), (_, b)| {
                (now + est / a.speed_factor).total_cmp(&(now + est / b.speed_factor))
            })
            .map(|(i, _)| i);
        if let Some(site_idx) = best {
            sites[site_idx].free_cores -= 1;
            assignments.push((job_idx, site_idx));
        }
    }
    assignments
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EventRange;
    use crate::jedi::JobInput;

    fn job(id: &str, est_cpu: f64, first: u64) -> JobDefinition {
        JobDefinition {
            id: id.into(),
            task_id: "t".into(),
            input: JobInput::Events(EventRange::new(first, 10)),
            est_cpu,
            is_scout: false,
            attempt: 1,
            predecessor: None,
        }
    }

    fn site(id: &str, speed: f64, free: u32) -> BrokerSite {
        BrokerSite {
            site_id: id.into(),
            speed_factor: speed,
            free_cores: free,
        }
    }

    #[test]
    fn single_job_goes_to_fastest_idle_site() {
        let jobs = vec![job("a", 100.0, 0)];
        let mut sites = vec![site("slow", 1.0, 1), site("fast", 2.0, 1)];
        let got = broker_assign(&jobs, &mut sites, 0.0);
        assert_eq!(got, vec![(0, 1)]);
    }

    #[test]
    fn equal_jobs_spread_across_sites() {
        let jobs = vec![job("a", 100.0, 0), job("b", 100.0, 10)];
        let mut sites = vec![site("s1", 1.0, 1), site("s2", 2.0, 1)];
        let got = broker_assign(&jobs, &mut sites, 0.0);
        // First job takes the fast site; the second finds only the slow
        // one free.
        assert_eq!(got, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn one_core_serializes_in_descending_cpu_order() {
        // Hand-simulated greedy schedule: with a single one-core site, the
        // broker picks the jobs largest-first across successive rounds.
        let mut jobs = vec![job("a", 4.0, 0), job("b", 2.0, 10), job("c", 1.0, 20)];
        let mut started = Vec::new();
        let mut now = 0.0;
        while !jobs.is_empty() {
            let mut sites = vec![site("only", 1.0, 1)];
            let got = broker_assign(&jobs, &mut sites, now);
            assert_eq!(got.len(), 1);
            let (job_idx, _) = got[0];
            let picked = jobs.remove(job_idx);
            now += picked.est_cpu;
            started.push(picked.est_cpu);
        }
        assert_eq!(started, vec![4.0, 2.0, 1.0]);
    }

    #[test]
    fn unassignable_jobs_remain_queued() {
        let jobs = vec![job("a", 1.0, 0), job("b", 1.0, 10)];
        let mut sites = vec![site("s", 1.0, 1)];
        let got = broker_assign(&jobs, &mut sites, 0.0);
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn deterministic_given_input_order() {
        let jobs: Vec<JobDefinition> = (0..20)
            .map(|k| job(&format!("j{k}"), 5.0, k * 10))
            .collect();
        let mut a = vec![site("s1", 1.0, 4), site("s2", 1.5, 4)];
        let mut b = a.clone();
        assert_eq!(
            broker_assign(&jobs, &mut a, 0.0),
            broker_assign(&jobs, &mut b, 0.0)
        );
    }
}
