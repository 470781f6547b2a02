//! The situation manager: proposes situations, casts roles, arms the
//! participants and tears instances down once every participant has
//! finished or dropped.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{World, SYS_SITUATION};
use crate::entities::SeKind;
use crate::messaging::MessageKind;
use crate::npc::Subbrain;
use crate::situations::{cast_roles, ParticipantStatus, SituationInstance};
use crate::value::{EntityRef, InboxId, InstanceId, NpcId, OwnerId, SituationId, Value};

#[derive(Debug)]
pub struct Manager {
    pub live: BTreeMap<SituationId, SituationInstance>,
    pub cooldown_until: Vec<u64>,
    pub rng: ChaCha8Rng,
    pub inbox: InboxId,
    /// Subscription flags at the start of the current tick, by NPC index.
    pub snapshot: Vec<bool>,
    /// (situation, template, outcome) of every destroyed instance.
    pub history: Vec<(SituationId, usize, &'static str)>,
    next: u32,
}

impl Manager {
    pub fn new(rng: ChaCha8Rng, inbox: InboxId) -> Self {
        Manager { live: BTreeMap::new(), cooldown_until: Vec::new(), rng, inbox, snapshot: Vec::new(), history: Vec::new(), next: 0 }
    }
}

impl World {
    pub(crate) fn manager_phase(&mut self) {
        let msgs = self.bus.drain(OwnerId::Manager, self.manager.inbox, None).unwrap_or_default();
        for m in msgs {
            let (Some(sid), Some(status), OwnerId::Npc(npc)) =
                (m.field("situation").and_then(Value::as_num), m.field("status").and_then(Value::as_str), m.sender)
            else {
                continue;
            };
            let sid = SituationId(sid as u32);
            let st = match status {
                "started" => ParticipantStatus::Started,
                "finished" => ParticipantStatus::Finished,
                _ => ParticipantStatus::Dropped,
            };
            if let Some(inst) = self.manager.live.get_mut(&sid) {
                // A drop is final; late reports cannot revive a participant.
                let slot = inst.status.entry(npc).or_insert(st);
                if *slot != ParticipantStatus::Dropped {
                    *slot = st;
                }
                let n = self.npcs[npc.index()].name.clone();
                self.emit(OwnerId::Situation(sid), "participant-status", &[("npc", n), ("status", st.as_str().into())]);
            }
        }

        let ids: Vec<SituationId> = self.manager.live.keys().copied().collect();
        for sid in ids {
            let inst = &self.manager.live[&sid];
            let outcome = if inst.all_finished() {
                Some("completed")
            } else if inst.all_dropped() {
                Some("aborted")
            } else {
                None
            };
            let Some(outcome) = outcome else { continue };
            let inst = self.manager.live.remove(&sid).expect("live");
            if outcome == "completed" {
                for npc in inst.participants().collect::<Vec<_>>() {
                    self.send_from(
                        OwnerId::Manager,
                        OwnerId::Npc(npc),
                        SYS_SITUATION,
                        MessageKind::RequestChange,
                        vec![("op".into(), Value::Str("end".into())), ("situation".into(), Value::Num(i64::from(sid.0)))],
                    );
                }
                self.stats.situations_completed += 1;
            } else {
                self.stats.situations_aborted += 1;
            }
            let t = inst.template;
            self.manager.cooldown_until[t] = self.tick + self.situation_templates[t].cooldown;
            self.manager.history.push((sid, t, outcome));
            let name = self.situation_templates[t].name.clone();
            self.emit(OwnerId::Situation(sid), "situation-destroyed", &[("template", name), ("outcome", outcome.into())]);
        }

        let every = self.config.manager_every.max(1);
        if self.config.situations && self.tick.is_multiple_of(every) {
            self.launch();
        }
    }

    fn eligible(&self, npc: NpcId) -> bool {
        let n = &self.npcs[npc.index()];
        self.manager.snapshot.get(npc.index()).copied().unwrap_or(false)
            && n.in_situation.is_none()
            && !n.combat
            && !n.quest
            && n.active == Some(Subbrain::Ambient)
    }

    /// Template indices in weighted random order without replacement.
    fn launch_order(&mut self) -> Vec<usize> {
        let mut left: Vec<usize> = (0..self.situation_templates.len()).collect();
        let mut out = Vec::with_capacity(left.len());
        while !left.is_empty() {
            let total: u64 = left.iter().map(|&t| u64::from(self.situation_templates[t].weight.max(1))).sum();
            let mut pick = self.manager.rng.gen_range(0..total);
            let mut k = 0;
            for (idx, &t) in left.iter().enumerate() {
                let w = u64::from(self.situation_templates[t].weight.max(1));
                if pick < w {
                    k = idx;
                    break;
                }
                pick -= w;
            }
            out.push(left.remove(k));
        }
        out
    }

    fn launch(&mut self) {
        if self.situation_templates.is_empty() {
            return;
        }
        let order = self.launch_order();
        let mut taken: BTreeSet<NpcId> = BTreeSet::new();
        for t in order {
            if self.manager.cooldown_until[t] > self.tick {
                continue;
            }
            let tmpl = self.situation_templates[t].clone();
            let pool: Vec<NpcId> = (0..self.npcs.len() as u32).map(NpcId).filter(|&n| self.eligible(n)).collect();
            let groups: Vec<(Option<InstanceId>, Vec<NpcId>)> = match &tmpl.area {
                Some(area) => self
                    .instances
                    .iter()
                    .filter(|i| i.kind() == SeKind::Area && i.template.name == *area)
                    .map(|i| (Some(i.id), pool.iter().copied().filter(|n| self.npcs[n.index()].areas.contains(&i.id)).collect()))
                    .collect(),
                None => vec![(None, pool)],
            };
            for (area, group) in groups {
                let cands: Vec<NpcId> = group.into_iter().filter(|n| !taken.contains(n)).collect();
                if cands.is_empty() {
                    continue;
                }
                let fits = |r: usize, c: usize| tmpl.roles[r].admits(&self.npcs[cands[c].index()].attrs);
                let Some(assign) = cast_roles(tmpl.roles.len(), cands.len(), &fits) else {
                    self.stats.cast_failures += 1;
                    continue;
                };
                let cast: Vec<(String, NpcId)> = assign.iter().enumerate().map(|(r, &c)| (tmpl.roles[r].name.clone(), cands[c])).collect();
                taken.extend(cast.iter().map(|(_, n)| *n));
                self.create_situation(t, area, cast);
            }
        }
    }

    fn create_situation(&mut self, t: usize, area: Option<InstanceId>, cast: Vec<(String, NpcId)>) {
        let sid = SituationId(self.manager.next);
        self.manager.next += 1;
        let lock_ctx = self.locks.create(OwnerId::Situation(sid));
        let inst = SituationInstance {
            id: sid,
            template: t,
            assignment: cast.clone(),
            status: cast.iter().map(|(_, n)| (*n, ParticipantStatus::NotStarted)).collect(),
            lock_ctx,
            created: self.tick,
        };
        self.manager.live.insert(sid, inst);
        self.stats.situations_launched += 1;
        if self.trace.enabled() {
            let name = self.situation_templates[t].name.clone();
            let area_name = area.map(|a| self.instances[a.index()].name.clone()).unwrap_or_else(|| "-".into());
            let roles = cast.iter().map(|(r, n)| format!("{r}:{}", self.npcs[n.index()].name)).collect::<Vec<_>>().join(",");
            self.emit(OwnerId::Situation(sid), "situation-proposed", &[("template", name), ("area", area_name), ("cast", roles)]);
        }
        let bindings: Vec<(String, Value)> = cast.iter().map(|(r, n)| (format!("role:{r}"), Value::Ref(EntityRef::Npc(*n)))).collect();
        for (r, (role, npc)) in cast.iter().enumerate() {
            let peers: Vec<Value> = cast.iter().filter(|(_, p)| p != npc).map(|(_, p)| Value::Ref(EntityRef::Npc(*p))).collect();
            let mut payload = vec![
                ("op".to_string(), Value::Str("arm".into())),
                ("situation".to_string(), Value::Num(i64::from(sid.0))),
                ("template".to_string(), Value::Num(t as i64)),
                ("role".to_string(), Value::Str(role.clone())),
                ("role-index".to_string(), Value::Num(r as i64)),
                ("lock".to_string(), Value::Num(i64::from(lock_ctx.0))),
                ("peers".to_string(), Value::List(peers)),
            ];
            payload.extend(bindings.iter().cloned());
            self.send_from(OwnerId::Manager, OwnerId::Npc(*npc), SYS_SITUATION, MessageKind::RequestChange, payload);
        }
    }
}
