'''Seeded synthetic ICU episodes with a planted multi-modal signal.

A latent *risk event* with an onset hour is drawn per episode. Depending on
the rule it shows up in the vitals (the first vital rises and the second
falls by `vital_shift` from the onset on), in the notes (notes from the
onset on mention palliative care) or in both. The labels follow the rule:

* ``redundant`` - one event drives vitals and notes, the label is the event,
* ``joint`` - independent vital and note events, the label is their AND,
* ``concept`` - only notes carry the event,
* ``vital`` - only vitals carry the event.

Mortality is the event, decompensation is the event from its onset on, and
each of the 25 phenotypes is mentioned in the notes when present. Every label
is flipped with probability `noise`.

Episodes also carry what the note rules exist for: a discharge summary naming
the outcome, a trailing note after the last informative one and notes that
only have a chart date.
'''
import codecs
import logging
from datetime import datetime, timedelta

import numpy as np

from .config import dump_fields, parse_bool, parse_fields
from .data import Episode, NoteRecord
from .errors import ConfigurationError
from .knowledge import ConceptEntry, Vocabulary, canonical_edge
from .sequence import MORTALITY_WINDOW, PHENOTYPE_COUNT

logger = logging.getLogger(__name__)

RULES = ('redundant', 'joint', 'concept', 'vital')

RISK_CONCEPT = 'C0000100'
RISK_TERM = 'palliative care'

# (id, canonical term, synonyms)
RISK_CONCEPTS = (
    (RISK_CONCEPT, RISK_TERM, ('comfort measures only',)),
    ('C0000101', 'do not resuscitate', ('dnr',)),
    ('C0000102', 'hospice', ()),
)

PHENOTYPE_TERMS = (
    'acute renal failure', 'stroke', 'myocardial infarction',
    'atrial fibrillation', 'chronic kidney disease', 'copd exacerbation',
    'surgical complication', 'heart block', 'congestive heart failure',
    'coronary artery disease', 'diabetic ketoacidosis', 'type 2 diabetes',
    'hyperlipidemia', 'essential hypertension', 'hyponatremia',
    'gastrointestinal bleed', 'hypertensive emergency', 'cirrhosis',
    'bronchitis', 'pharyngitis', 'pneumothorax', 'pneumonia',
    'respiratory failure', 'septicemia', 'cardiogenic shock',
)

FILLER_TERMS = (
    'chest x ray', 'blood culture', 'foley catheter', 'central line',
    'arterial line', 'nasogastric tube', 'insulin drip', 'heparin infusion',
    'physical therapy', 'wound care', 'skin breakdown', 'urine output',
    'fluid bolus', 'electrolyte repletion', 'pain control',
    'sedation holiday', 'ventilator weaning', 'incentive spirometry',
    'ambulation', 'diet advanced', 'echocardiogram', 'head ct', 'lactate',
    'troponin', 'potassium', 'magnesium', 'vancomycin', 'piperacillin',
    'metoprolol', 'furosemide',
)

SENTENCES = (
    'patient seen and examined', 'resting quietly', 'vitals reviewed',
    'plan discussed with team', 'continue current management',
    'no acute events overnight', 'family updated at bedside',
)

CATEGORIES = ('Nursing', 'Physician', 'Radiology', 'Respiratory')

EPOCH = datetime(2150, 1, 1)


def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise ValueError('not a probability: {0}'.format(text))
    return value


# (name, parser, default)
FIELDS = (
    ('n_episodes', int, 200),
    ('n_vs', int, 6),
    ('min_length', int, MORTALITY_WINDOW),
    ('max_length', int, 72),
    ('vocab_size', int, len(FILLER_TERMS)),
    ('rule', str, 'redundant'),
    ('risk_rate', _probability, 0.4),
    ('noise', _probability, 0.05),
    ('note_rate', _probability, 0.15),
    ('missing_rate', _probability, 0.1),
    ('undated_rate', _probability, 0.1),
    ('repeat_rate', _probability, 0.2),
    ('phenotype_rate', _probability, 0.15),
    ('vital_shift', float, 2.0),
    ('onset_window', int, MORTALITY_WINDOW),
    ('discharge_summaries', parse_bool, True),
    ('seed', int, 0),
)


class SyntheticSpec(object):
    '''Parameters of :func:`generate_synthetic`.

    Episode lengths are uniform in ``[min_length, max_length]``. The onset of
    the risk event is uniform in the second quarter of `onset_window`, so
    with the default window it is visible to the mortality task.
    '''
    def __init__(self, **values):
        for name, _, default in FIELDS:
            setattr(self, name, values.pop(name, default))
        if values:
            raise ConfigurationError('Unknown synthetic spec keys: {0}'
                                     .format(', '.join(sorted(values))))

    def __repr__(self):
        return '<SyntheticSpec n={0} rule={1} seed={2}>'.format(
            self.n_episodes, self.rule, self.seed)

    def replace(self, **changes):
        values = dict((name, getattr(self, name)) for name, _, _ in FIELDS)
        values.update(changes)
        return SyntheticSpec(**values)

    def dumps(self):
        return dump_fields(self, FIELDS)

    @classmethod
    def loads(cls, text, source='<string>'):
        return cls(**parse_fields(text, FIELDS, source))

    @classmethod
    def load(cls, path):
        with codecs.open(path, 'r', 'utf-8') as f:
            return cls.loads(f.read(), source=path)


class SpecValidator(object):
    def __init__(self, spec):
        self.spec = spec
        self.template = 'Synthetic spec error: {0}'

    def _raise(self, msg):
        raise ConfigurationError(self.template.format(msg))

    def validate(self):
        spec = self.spec
        if spec.n_episodes < 1:
            self._raise('n_episodes must be >= 1')
        if spec.n_vs < 2:
            self._raise('n_vs must be >= 2, the planted pattern uses two '
                        'vitals')
        if not 4 <= spec.min_length <= spec.max_length:
            self._raise('lengths must satisfy 4 <= min_length <= max_length')
        if not 4 <= spec.onset_window <= spec.min_length:
            self._raise('onset_window must be in [4, min_length]')
        if not 0 <= spec.vocab_size <= len(FILLER_TERMS):
            self._raise('vocab_size must be in [0, {0}]'
                        .format(len(FILLER_TERMS)))
        if spec.rule not in RULES:
            self._raise('rule must be one of {0}'.format(RULES))
        for name in ('risk_rate', 'noise', 'note_rate', 'missing_rate',
                     'undated_rate', 'repeat_rate', 'phenotype_rate'):
            if not 0.0 <= getattr(spec, name) <= 1.0:
                self._raise('{0} must be a probability'.format(name))
        return spec


def synthetic_vocabulary(vocab_size=len(FILLER_TERMS)):
    '''Risk, phenotype and the first `vocab_size` filler concepts.'''
    vocabulary = Vocabulary()
    for concept_id, term, synonyms in RISK_CONCEPTS:
        vocabulary.add(ConceptEntry(concept_id, term, synonyms, 'risk'))
    for j, term in enumerate(PHENOTYPE_TERMS):
        vocabulary.add(ConceptEntry(phenotype_concept(j), term, (),
                                    'phenotype'))
    for j, term in enumerate(FILLER_TERMS[:vocab_size]):
        vocabulary.add(ConceptEntry('C{0:07d}'.format(300 + j), term, (),
                                    'finding'))
    return vocabulary


def phenotype_concept(j):
    return 'C{0:07d}'.format(200 + j)


def synthetic_ontology(vocabulary, rng):
    '''Risk concepts linked together, fillers linked at random.'''
    edges = set([canonical_edge(RISK_CONCEPT, 'C0000101'),
                 canonical_edge(RISK_CONCEPT, 'C0000102')])
    fillers = sorted(c for c, e in vocabulary.entries.items()
                     if e.semantic_group == 'finding')
    phenotypes = sorted(c for c, e in vocabulary.entries.items()
                        if e.semantic_group == 'phenotype')
    for concept_id in fillers:
        other = fillers[rng.randint(len(fillers))]
        edge = canonical_edge(concept_id, other)
        if edge is not None:
            edges.add(edge)
    if fillers:
        for concept_id in phenotypes:
            edges.add(canonical_edge(concept_id,
                                     fillers[rng.randint(len(fillers))]))
    return edges


class _NoteBuilder(object):
    '''Collects phrases per hour and turns them into notes.'''
    def __init__(self, admit_time, rng):
        self.admit_time = admit_time
        self.rng = rng
        self.phrases = {}
        self.dated = set()

    def add(self, hour, phrase, keep_time=False):
        self.phrases.setdefault(hour, []).append(phrase)
        if keep_time:
            self.dated.add(hour)

    def notes(self, undated_rate):
        notes = []
        for hour in sorted(self.phrases):
            chart_time = self.admit_time + timedelta(
                hours=hour, minutes=int(self.rng.randint(60)))
            undated = (hour not in self.dated and
                       self.rng.uniform() < undated_rate)
            notes.append(NoteRecord(
                text='. '.join(self.phrases[hour]) + '.',
                category=CATEGORIES[self.rng.randint(len(CATEGORIES))],
                chart_date=chart_time.date(),
                chart_time=None if undated else chart_time))
        return notes


def _flip(label, noise, rng):
    return 1 - label if rng.uniform() < noise else label


def _episode(spec, rng, patient_id, episode_index, fillers):
    length = int(rng.randint(spec.min_length, spec.max_length + 1))
    admit_time = EPOCH + timedelta(days=int(rng.randint(3650)),
                                   hours=int(rng.randint(24)),
                                   minutes=int(rng.randint(60)))
    quarter = spec.onset_window // 4
    onset = int(rng.randint(quarter, 2 * quarter + 1))
    risk = rng.uniform() < spec.risk_rate
    if spec.rule == 'joint':
        vital_event = risk
        concept_event = rng.uniform() < spec.risk_rate
        event = vital_event and concept_event
    else:
        vital_event = risk and spec.rule in ('redundant', 'vital')
        concept_event = risk and spec.rule in ('redundant', 'concept')
        event = risk

    vitals = rng.standard_normal((length, spec.n_vs))
    if vital_event:
        vitals[onset:, 0] += spec.vital_shift
        vitals[onset:, 1] -= spec.vital_shift
    missing = rng.uniform(size=(length, spec.n_vs)) < spec.missing_rate
    vitals[missing] = 0.0

    builder = _NoteBuilder(admit_time, rng)
    for hour in range(length - 1):
        if rng.uniform() < spec.note_rate:
            builder.add(hour, SENTENCES[rng.randint(len(SENTENCES))])
            if fillers:
                builder.add(hour, fillers[rng.randint(len(fillers))])
    if concept_event:
        last = max(onset, min(length, spec.onset_window) - 2)
        hours = set([onset])
        hours.update(int(h) for h in
                     rng.randint(onset, last + 1, size=rng.randint(3)))
        for hour in sorted(hours):
            builder.add(hour, 'transition to ' + RISK_TERM, keep_time=True)
            if rng.uniform() < 0.5:
                builder.add(hour, 'do not resuscitate order placed',
                            keep_time=True)
    phenotypes = []
    for j, term in enumerate(PHENOTYPE_TERMS):
        present = int(rng.uniform() < spec.phenotype_rate)
        if present:
            builder.add(int(rng.randint(length - 1)), 'history of ' + term)
        phenotypes.append(_flip(present, spec.noise, rng))
    builder.add(length - 1, SENTENCES[rng.randint(len(SENTENCES))],
                keep_time=True)
    notes = builder.notes(spec.undated_rate)
    if spec.discharge_summaries:
        discharge = admit_time + timedelta(hours=length + 2)
        notes.append(NoteRecord(
            text='discharge summary. patient {0}.'.format(
                'expired' if event else 'discharged home'),
            category='Discharge summary', chart_date=discharge.date(),
            chart_time=discharge, is_discharge_summary=True))

    labels = {
        'mortality': _flip(int(event), spec.noise, rng),
        'decompensation': [_flip(int(event and t >= onset), spec.noise, rng)
                           for t in range(length)],
        'phenotyping': phenotypes,
    }
    episode = Episode(patient_id, episode_index, admit_time, vitals, missing,
                      notes, labels)
    return episode, {'onset': onset, 'event': bool(event),
                     'vital_event': bool(vital_event),
                     'concept_event': bool(concept_event)}


def generate_synthetic(spec, with_latents=False):
    '''Generate episodes, vocabulary and ontology from a seeded spec.

    The same spec always yields the same data.

    :param spec: Generator parameters
    :type spec: :class:`SyntheticSpec`
    :param with_latents: Also return the latent events per episode key
    :returns: ``(episodes, vocabulary, edges)``, plus a dict of latents when
        requested
    '''
    SpecValidator(spec).validate()
    rng = np.random.RandomState(spec.seed)
    vocabulary = synthetic_vocabulary(spec.vocab_size)
    edges = synthetic_ontology(vocabulary, rng)
    fillers = FILLER_TERMS[:spec.vocab_size]
    episodes = []
    latents = {}
    patient = 0
    index = 0
    for i in range(spec.n_episodes):
        if i > 0 and rng.uniform() < spec.repeat_rate:
            index += 1
        else:
            patient += 1
            index = 0
        episode, latent = _episode(spec, rng, 'P{0:05d}'.format(patient),
                                   index, fillers)
        episodes.append(episode)
        latents[episode.key] = latent
    logger.info('Generated %d synthetic episodes for %d patients (rule %s)',
                len(episodes), patient, spec.rule)
    if with_latents:
        return episodes, vocabulary, edges, latents
    return episodes, vocabulary, edges
