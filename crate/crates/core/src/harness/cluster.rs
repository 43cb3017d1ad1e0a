//! The simulated deployment: IAS, administrators, ledger organizations, agent hosts, clients, authority.

use std::collections::BTreeSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::admin::{AdminError, Administrator, AgentEndpoint, Lease, QuorumPolicy, RenewRefusal, Role};
use crate::agent::complaint::ClientComplaint;
use crate::agent::config::AgentConfig;
use crate::agent::host::{transfer_key, AgentHost, HostError};
use crate::agent::program::{AgentError, Reply, Request};
use crate::agent::scanner::MatchRecord;
use crate::attestation::AttestationAuthority;
use crate::bus::Bus;
use crate::codec::{Encode, Frame, Writer};
use crate::crypto::{derive_rng, generate_keypair, HashDigest, Scheme, SigningKeyPair, SimRng};
use crate::enclave::{measure, Machine, Measurement, SimClock, TrustedTime};
use crate::ledger::{verify_endorsed, CertCache, EndorsedResponse, LedgerNetwork, LedgerReject, Query, StateView, VerifiedState};
use crate::participants::{AuthorityInbox, Client, ClientConfig, SubmitOutcome};
use crate::trace::{SecretRegistry, Trace};

use super::oracle::HistoryItem;
use super::scenario::{ConfigError, ScenarioConfig};

/// Simulated wall-clock time at inception.
pub const START_TIME: u64 = 1_000_000;

pub const AUTHORITY: &str = "authority";

pub fn admin_name(id: u32) -> String {
    format!("admin-{id}")
}

pub fn agent_name(machine: u32) -> String {
    format!("agent-{machine}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLine {
    pub at: u64,
    pub event: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Submission {
    pub at: u64,
    pub perp: String,
    pub user: String,
    pub body: String,
    pub agent: u32,
    pub acked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveredReport {
    pub at: u64,
    pub agent: u32,
    pub matches: Vec<MatchRecord>,
}

pub struct Cluster {
    pub cfg: ScenarioConfig,
    pub policy: QuorumPolicy,
    pub clock: SimClock,
    pub trace: Trace,
    pub registry: SecretRegistry,
    pub bus: Bus,
    pub ias: AttestationAuthority,
    pub admins: Vec<Administrator>,
    pub ledger: LedgerNetwork,
    pub hosts: Vec<AgentHost>,
    pub machines: Vec<u32>,
    pub authority: AuthorityInbox,
    pub measurement: Measurement,
    pub agent_config: AgentConfig,
    pub roles: Vec<Role>,
    pub killed: BTreeSet<usize>,
    pub isolated: BTreeSet<usize>,
    pub events: Vec<EventLine>,
    pub submissions: Vec<Submission>,
    pub reports: Vec<DeliveredReport>,
    pub history: Vec<HistoryItem>,
    /// (host index, isolation time, first time found without k leases).
    pub lockouts: Vec<(usize, u64, Option<u64>)>,
    rng: SimRng,
    clients: u64,
}

fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (l, r) = v.split_at_mut(b);
        (&mut l[a], &mut r[0])
    } else {
        let (l, r) = v.split_at_mut(a);
        (&mut r[0], &mut l[b])
    }
}

impl Cluster {
    /// Builds every party; no agent is attested yet.
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let policy = cfg.policy()?;
        let seed = cfg.seed;
        let clock = SimClock::new(START_TIME);
        let trace = Trace::new();
        let registry = SecretRegistry::new();
        let ias = AttestationAuthority::new(&mut derive_rng(seed, "ias"));
        let org_keys: Vec<SigningKeyPair> =
            (1..=cfg.n).map(|i| generate_keypair(Scheme::Admin, &mut derive_rng(seed, &admin_name(i)))).collect();
        let authority = AuthorityInbox::generate(&mut derive_rng(seed, AUTHORITY), cfg.report_size as usize);
        let mut agent_config = AgentConfig::new(
            ias.public_key(),
            org_keys.iter().map(|k| k.public.clone()).collect(),
            authority.public_key().clone(),
            policy,
        );
        agent_config.report_size = cfg.report_size;
        agent_config.debug_leak = cfg.debug_leak;
        agent_config.validate().map_err(ConfigError::Invalid)?;
        let measurement = measure(&agent_config.code_identity());
        let admins = org_keys
            .iter()
            .enumerate()
            .map(|(i, k)| Administrator::new(i as u32 + 1, k.clone(), clock.clone(), ias.public_key(), measurement))
            .collect();
        let mut ledger =
            LedgerNetwork::new(&org_keys, policy.read_quorum as usize, trace.clone(), &mut derive_rng(seed, "ledger"));
        for c in &cfg.corruption {
            ledger.set_behavior(c.org, c.behavior);
        }
        ledger.set_hub_strategy(cfg.hub);
        let machines: Vec<u32> = cfg.agents.iter().map(|a| a.machine).collect();
        let roles = cfg.agents.iter().map(|a| a.role()).collect();
        let hosts = machines
            .iter()
            .map(|&m| {
                let machine = Machine::new(m, seed, clock.clone(), trace.clone(), registry.clone());
                AgentHost::new(agent_name(m), machine, agent_config.clone())
            })
            .collect();
        Ok(Cluster {
            policy,
            clock,
            bus: Bus::new(trace.clone()),
            trace,
            registry,
            ias,
            admins,
            ledger,
            hosts,
            machines,
            authority,
            measurement,
            agent_config,
            roles,
            killed: BTreeSet::new(),
            isolated: BTreeSet::new(),
            events: Vec::new(),
            submissions: Vec::new(),
            reports: Vec::new(),
            history: Vec::new(),
            lockouts: Vec::new(),
            rng: derive_rng(seed, "cluster"),
            clients: 0,
            cfg,
        })
    }

    pub fn now(&self) -> u64 {
        self.clock.now() - START_TIME
    }

    pub fn advance_to(&mut self, at: u64) {
        self.clock.advance_to(START_TIME + at);
    }

    fn note(&mut self, event: impl Into<String>, outcome: impl Into<String>) {
        let line = EventLine { at: self.now(), event: event.into(), outcome: outcome.into() };
        self.events.push(line);
    }

    pub fn index_of(&self, machine: u32) -> Option<usize> {
        self.machines.iter().position(|&m| m == machine)
    }

    pub fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.hosts.len()).filter(|i| !self.killed.contains(i))
    }

    fn nonce(&mut self) -> [u8; 32] {
        let mut n = [0u8; 32];
        self.rng.fill_bytes(&mut n);
        n
    }

    fn admin_is_honest(&self, id: u32) -> bool {
        !self.cfg.corrupt_admins.contains(&id)
    }

    fn admin_refuses(&self, id: u32) -> bool {
        self.cfg.refusing_admins.contains(&id)
    }

    fn send(&mut self, from: &str, to: &str, kind: &str, frame: Frame) -> bool {
        self.bus.send(from, to, kind, frame)
    }

    /// Attests every agent, issues initial leases, distributes the cluster key and seals.
    ///
    /// Any key-distribution failure aborts all agents.
    pub fn inception(&mut self) -> Result<(), String> {
        let ttl = self.cfg.lease_ttl_seconds;
        for i in 0..self.hosts.len() {
            let p = self.hosts[i].attest(&mut self.ias).map_err(|e| format!("attest {}: {e}", self.hosts[i].name()))?;
            let mut leases = Vec::new();
            for a in 0..self.admins.len() {
                let id = self.admins[a].id();
                let host = self.hosts[i].name().to_string();
                if !self.send(&host, &admin_name(id), "PUBLICATION", p.to_frame()) {
                    continue;
                }
                if let Ok(l) = self.admins[a].issue_lease(&p, self.roles[i], ttl) {
                    if self.send(&admin_name(id), &host, "LEASE", Frame::clear(l.to_wire())) {
                        leases.push(l);
                    }
                }
            }
            self.hosts[i].install_leases(leases).map_err(|e| format!("leases {}: {e}", self.hosts[i].name()))?;
        }
        self.note("attest+lease", format!("{} agents", self.hosts.len()));
        if let Err(e) = self.distribute_key() {
            self.abort_all();
            self.note("inception", format!("abort-all: {e}"));
            return Err(e);
        }
        for i in 0..self.hosts.len() {
            self.hosts[i].seal().map_err(|e| format!("seal: {e}"))?;
        }
        self.note("inception", "ok");
        Ok(())
    }

    fn distribute_key(&mut self) -> Result<(), String> {
        let leaders: Vec<usize> = (0..self.hosts.len()).filter(|&i| self.roles[i].contains(Role::LEADER)).collect();
        let Some(&first) = leaders.first() else {
            return Err("no leader".into());
        };
        for &l in &leaders {
            self.hosts[l].call(&Request::GenerateClusterKey).map_err(|e| format!("generate: {e}"))?;
        }
        for r in 0..self.hosts.len() {
            if r == first {
                continue;
            }
            let (s, t) = pair_mut(&mut self.hosts, first, r);
            transfer_key(s, t, &mut self.bus).map_err(|e| format!("transfer to {}: {e}", t.name()))?;
        }
        Ok(())
    }

    pub fn abort_all(&mut self) {
        for h in &mut self.hosts {
            h.abort();
        }
    }

    pub fn tick_all(&mut self) {
        let live: Vec<usize> = self.live().collect();
        for i in live {
            let _ = self.hosts[i].tick();
        }
    }

    fn reaches(&self, admin: u32, i: usize) -> bool {
        !self.admin_refuses(admin) && self.bus.reachable(&admin_name(admin), self.hosts[i].name())
    }

    /// Every reachable administrator audits the agent's new log records and renews.
    /// Admin `a` audits agent `i`'s log export; `None` if the two cannot communicate.
    pub fn renew_by(&mut self, a: usize, i: usize) -> Option<Result<Lease, RenewRefusal>> {
        let ttl = self.cfg.lease_ttl_seconds;
        let id = self.hosts[i].agent_id()?;
        let admin = self.admins[a].id();
        if !self.reaches(admin, i) {
            return None;
        }
        let from = self.admins[a].audit_index(&id)?;
        let nonce = self.nonce();
        let (head, len) = self.hosts[i].log_anchor(nonce)?;
        let records = self.hosts[i].export_log(from)[..(len.saturating_sub(from)) as usize].to_vec();
        let mut w = Writer::new();
        w.list(&records).put(&head);
        let host = self.hosts[i].name().to_string();
        if !self.send(&host, &admin_name(admin), "LOG_EXPORT", w.into_frame()) {
            return None;
        }
        let r = self.admins[a].renew_lease(&id, &records, &head, &nonce, ttl);
        match r {
            Ok(l) => self.send(&admin_name(admin), &host, "LEASE", Frame::clear(l.to_wire())).then_some(Ok(l)),
            Err(e) => Some(Err(e)),
        }
    }

    pub fn renew(&mut self, i: usize) -> (usize, Vec<String>) {
        if self.hosts[i].agent_id().is_none() {
            return (0, vec!["unattested".into()]);
        }
        let mut leases = Vec::new();
        let mut refusals = Vec::new();
        for a in 0..self.admins.len() {
            match self.renew_by(a, i) {
                Some(Ok(l)) => leases.push(l),
                Some(Err(r)) => refusals.push(format!("admin-{}: {r}", self.admins[a].id())),
                None => {}
            }
        }
        let n = leases.len();
        if n > 0 {
            let _ = self.hosts[i].install_leases(leases);
        }
        (n, refusals)
    }

    pub fn renew_all(&mut self) {
        let live: Vec<usize> = self.live().collect();
        for i in live {
            let (n, refusals) = self.renew(i);
            if !refusals.is_empty() {
                let name = self.hosts[i].name().to_string();
                self.note(format!("renew {name}"), format!("{n} renewed; {}", refusals.join(", ")));
            }
        }
    }

    /// Stale-lease revival by every reachable administrator.
    /// Admin `a` issues a lease bound to agent `i`'s current trusted time.
    pub fn revive_by(&mut self, a: usize, i: usize, role: Option<Role>) -> Result<Lease, AdminError> {
        if !self.reaches(self.admins[a].id(), i) {
            return Err(AdminError::Unreachable);
        }
        let ttl = self.cfg.lease_ttl_seconds;
        let nonce = self.nonce();
        self.admins[a].revive_stale_agent(&mut self.hosts[i], role, ttl, nonce)
    }

    pub fn revive(&mut self, i: usize, role: Option<Role>) -> usize {
        let mut leases: Vec<Lease> = Vec::new();
        for a in 0..self.admins.len() {
            if let Ok(l) = self.revive_by(a, i, role) {
                leases.push(l);
            }
        }
        let n = leases.len();
        if let Some(r) = role {
            self.roles[i] = r;
        }
        let outcome = self.hosts[i].install_leases(leases).map(|r| r.name());
        let name = self.hosts[i].name().to_string();
        self.note(format!("revive {name}"), format!("{n} leases, role {outcome:?}"));
        n
    }

    /// Whether the agent currently holds k agreeing valid leases.
    pub fn is_leased(&mut self, i: usize) -> bool {
        self.hosts[i].role().is_ok()
    }

    pub fn isolate(&mut self, i: usize) {
        let host = self.hosts[i].name().to_string();
        for id in 1..=self.cfg.n {
            if self.admin_is_honest(id) {
                self.bus.cut_link(&admin_name(id), &host);
            }
        }
        self.ledger.bus_mut().isolate(&host);
        self.isolated.insert(i);
        let at = self.now();
        self.lockouts.push((i, at, None));
        self.note(format!("isolate {host}"), "cut from honest admins and ledger");
    }

    /// Records the first time each isolated agent is found without k valid leases.
    pub fn probe_lockouts(&mut self) {
        let now = self.now();
        for j in 0..self.lockouts.len() {
            let (i, _, locked) = self.lockouts[j];
            if locked.is_none() && self.isolated.contains(&i) && !self.killed.contains(&i) && !self.is_leased(i) {
                self.lockouts[j].2 = Some(now);
            }
        }
    }

    pub fn heal(&mut self, i: usize) {
        let host = self.hosts[i].name().to_string();
        for id in 1..=self.cfg.n {
            self.bus.restore_link(&admin_name(id), &host);
        }
        self.ledger.bus_mut().heal(&host);
        self.isolated.remove(&i);
        self.note(format!("heal {host}"), "ok");
    }

    pub fn kill(&mut self, i: usize) {
        let host = self.hosts[i].name().to_string();
        self.hosts[i].abort();
        self.killed.insert(i);
        self.bus.isolate(&host);
        self.ledger.bus_mut().isolate(&host);
        self.note(format!("kill {host}"), "machine removed");
    }

    pub fn reboot(&mut self, i: usize) {
        self.hosts[i].reboot();
        let name = self.hosts[i].name().to_string();
        self.note(format!("reboot {name}"), "ok");
    }

    pub fn recover(&mut self, i: usize) -> Result<(), HostError> {
        let r = self.hosts[i].recover(&mut self.ledger);
        let reload = r.as_ref().ok().map(|_| self.hosts[i].reload_leases());
        let name = self.hosts[i].name().to_string();
        self.note(format!("recover {name}"), format!("{r:?}; leases {reload:?}"));
        r
    }

    fn pick(&self, machine: Option<u32>, role: Role) -> Option<usize> {
        match machine {
            Some(m) => self.index_of(m),
            None => self.live().find(|&i| self.roles[i].contains(role) && !self.isolated.contains(&i)),
        }
    }

    pub fn client_config(&self) -> ClientConfig {
        ClientConfig {
            econf_mr: self.measurement,
            ias_pk: self.ias.public_key(),
            admin_pks: self.agent_config.admin_pks.clone(),
            k: self.policy.k as usize,
        }
    }

    pub fn submit(&mut self, perp: &str, user: &str, body: &str, machine: Option<u32>) -> SubmitOutcome {
        let Some(i) = self.pick(machine, Role::WRITER) else {
            self.note("submit", "no writer");
            return SubmitOutcome::Failed(crate::participants::SubmitFailure::Transport);
        };
        self.clients += 1;
        let name = format!("client-{}", self.clients);
        let rng = derive_rng(self.cfg.seed, &name);
        let mut client = Client::new(name.clone(), self.client_config(), self.clock.clone(), rng);
        let complaint = ClientComplaint { perpetrator: perp.into(), user: user.into(), body: body.as_bytes().to_vec() };
        let outcome = client.submit(&mut self.hosts[i], &mut self.ledger, &mut self.bus, &complaint);
        let acked = outcome == SubmitOutcome::Acked;
        let at = self.now();
        self.submissions.push(Submission {
            at,
            perp: perp.into(),
            user: user.into(),
            body: body.into(),
            agent: self.machines[i],
            acked,
        });
        if acked {
            self.history.push(HistoryItem::Acked { perp: perp.into(), user: user.into(), body: body.into() });
        }
        let host = self.hosts[i].name().to_string();
        self.note(format!("submit {name} -> {host} ({} byte body)", body.len()), format!("{outcome:?}"));
        outcome
    }

    /// One scan: verified GET-ALL, marker commit, report delivered to the authority.
    pub fn scan(&mut self, machine: Option<u32>) -> Result<usize, AgentError> {
        let Some(i) = self.pick(machine, Role::SCANNER) else {
            self.note("scan", "no scanner");
            return Err(AgentError::NoPending);
        };
        let host = self.hosts[i].name().to_string();
        let result = self.hosts[i].scan(&mut self.ledger);
        let result = match result {
            Ok(report) => {
                let mut w = Writer::new();
                w.opaque_bytes(&report);
                if self.bus.send(&host, AUTHORITY, "REPORT", w.into_frame()) {
                    let at = TrustedTime { time: self.clock.now(), nonce: [0; 32] };
                    match self.authority.receive(at, &report) {
                        Ok(matches) => {
                            let n = matches.len();
                            self.history.push(HistoryItem::Report(matches.clone()));
                            self.reports.push(DeliveredReport { at: self.now(), agent: self.machines[i], matches });
                            Ok(n)
                        }
                        Err(e) => Err(AgentError::Malformed(e.to_string())),
                    }
                } else {
                    Err(AgentError::NoPending)
                }
            }
            Err(e) => Err(e),
        };
        self.note(format!("scan {host}"), format!("{result:?}"));
        result
    }

    /// Agent-side acceptance check of a ledger response.
    pub fn verify_response(&self, response: &EndorsedResponse, nonce: &[u8; 32]) -> Result<VerifiedState, LedgerReject> {
        let mut cache = CertCache::default();
        verify_endorsed(response, nonce, &self.agent_config.admin_pks, self.policy.read_quorum as usize, &mut cache)
    }

    /// Fresh nonce-bound GET-ALL, verified as an agent would.
    pub fn verified_view(&mut self) -> Result<Vec<HashDigest>, String> {
        let nonce = self.nonce();
        let response = self.ledger.get("observer", nonce, Query::All).map_err(|e| e.to_string())?;
        self.verify_response(&response, &nonce).map_err(|e| e.to_string())?;
        match response.view {
            StateView::Full(entries) => Ok(entries.iter().map(|e| e.payload_hash).collect()),
            _ => Err("not a full view".into()),
        }
    }

    pub fn acked_payloads(&self) -> Vec<HashDigest> {
        self.hosts.iter().flat_map(|h| h.acked_payloads().iter().copied()).collect()
    }

    /// Cluster-key digests published by enclaves currently holding a key.
    pub fn key_digests(&self) -> Vec<(String, HashDigest)> {
        self.registry.key_digests().into_iter().collect()
    }

    /// An agent build differing from the cluster's in `version`.
    pub fn variant_config(&self, version: &str) -> AgentConfig {
        let mut c = self.agent_config.clone();
        c.version = version.into();
        c
    }

    /// Adds an agent host running `config` on a fresh machine.
    pub fn add_host(&mut self, machine: u32, config: AgentConfig, role: Role) -> usize {
        let m = Machine::new(machine, self.cfg.seed, self.clock.clone(), self.trace.clone(), self.registry.clone());
        self.hosts.push(AgentHost::new(agent_name(machine), m, config));
        self.machines.push(machine);
        self.roles.push(role);
        self.hosts.len() - 1
    }

    /// Attests host `i` and obtains ordinary leases from the first `admins` administrators.
    pub fn attest_and_lease(&mut self, i: usize, admins: usize) -> Result<Role, String> {
        let p = self.hosts[i].attest(&mut self.ias).map_err(|e| e.to_string())?;
        let ttl = self.cfg.lease_ttl_seconds;
        let role = self.roles[i];
        let leases: Vec<Lease> =
            self.admins.iter_mut().take(admins).filter_map(|a| a.issue_lease(&p, role, ttl).ok()).collect();
        self.hosts[i].install_leases(leases).map_err(|e| e.to_string())
    }

    /// Key transfer between two hosts over the bus.
    pub fn transfer(&mut self, from: usize, to: usize) -> Result<(), HostError> {
        let (s, t) = pair_mut(&mut self.hosts, from, to);
        transfer_key(s, t, &mut self.bus)
    }

    /// Raw ecall on host `i`, for exhaustive gating checks.
    pub fn call(&mut self, i: usize, req: &Request) -> Result<Reply, AgentError> {
        self.hosts[i].call(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(agents: u32) -> Cluster {
        let mut cfg = ScenarioConfig::baseline(4, 3, agents, 2);
        cfg.tick_seconds = 0;
        cfg.scan_period_seconds = 0;
        Cluster::new(cfg).unwrap()
    }

    #[test]
    fn inception_leases_every_agent_and_shares_one_key() {
        let mut c = quiet(3);
        c.inception().unwrap();
        for i in 0..3 {
            assert!(c.is_leased(i));
        }
        let d = c.key_digests();
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|(_, x)| *x == d[0].1));
    }

    #[test]
    fn leases_lapse_without_renewal() {
        let mut c = quiet(1);
        c.inception().unwrap();
        c.advance_to(c.cfg.lease_ttl_seconds + 10);
        assert!(!c.is_leased(0));
    }

    #[test]
    fn ticked_cluster_renews() {
        let mut c = quiet(1);
        c.inception().unwrap();
        for m in 1..=3 {
            c.advance_to(m * 1800);
            c.tick_all();
        }
        let (n, refusals) = c.renew(0);
        assert_eq!((n, refusals.len()), (4, 0));
    }

    #[test]
    fn submission_is_acked_and_recorded() {
        let mut c = quiet(1);
        c.inception().unwrap();
        let out = c.submit("perp", "user", "a body", Some(1));
        assert!(matches!(out, SubmitOutcome::Acked), "{out:?}");
        assert_eq!(c.submissions.len(), 1);
        assert!(c.submissions[0].acked);
    }
}
