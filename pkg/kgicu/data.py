'''Episodes, note preprocessing and the on-disk dataset layout.

A dataset directory holds:

* ``episodes.jsonl`` - one episode per line,
* ``vocab.tsv`` - the concept vocabulary,
* ``edges.tsv`` - the ontology edges.

Vitals live on an hourly grid starting at the admission time. Notes carry a
chart date and, optionally, a chart time; :func:`preprocess_notes` completes
the times, removes leaking notes and assigns every note to its hour.
'''
import codecs
import copy
import hashlib
import json
import logging
import os
from datetime import datetime, time

import numpy as np

from .errors import DataFormatError, ValidationError
from .knowledge import Vocabulary, load_edges, save_edges
from .sequence import MORTALITY_WINDOW, PHENOTYPE_COUNT, TaskKind

logger = logging.getLogger(__name__)

EPISODES_FILE = 'episodes.jsonl'
VOCABULARY_FILE = 'vocab.tsv'
EDGES_FILE = 'edges.tsv'

SPLITS = ('train', 'val', 'test')
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)

END_OF_DAY = time(23, 59, 59)
_DATE = '%Y-%m-%d'
_DATETIME = '%Y-%m-%dT%H:%M:%S'


class NoteRecord(object):
    '''One clinical note.

    `hour` is the grid step the note belongs to; it is set by
    :func:`preprocess_notes`.
    '''
    def __init__(self, text, category, chart_date, chart_time=None,
                 is_discharge_summary=False, hour=None):
        self.text = text
        self.category = category
        self.chart_date = chart_date
        self.chart_time = chart_time
        self.is_discharge_summary = is_discharge_summary
        self.hour = hour

    def __repr__(self):
        return '<NoteRecord {0} {1} hour={2}>'.format(
            self.category, self.chart_time or self.chart_date, self.hour)

    def replace(self, **changes):
        note = copy.copy(self)
        for name, value in changes.items():
            setattr(note, name, value)
        return note

    def to_json(self):
        return {
            't': self.hour,
            'text': self.text,
            'category': self.category,
            'chart_date': self.chart_date.strftime(_DATE),
            'chart_time': (self.chart_time.strftime(_DATETIME)
                           if self.chart_time is not None else None),
            'has_chart_time': self.chart_time is not None,
            'is_discharge_summary': self.is_discharge_summary,
        }

    @classmethod
    def from_json(cls, data):
        chart_time = data.get('chart_time')
        if not data.get('has_chart_time', chart_time is not None):
            chart_time = None
        return cls(
            text=data['text'],
            category=data.get('category', ''),
            chart_date=datetime.strptime(data['chart_date'], _DATE).date(),
            chart_time=(datetime.strptime(chart_time, _DATETIME)
                        if chart_time else None),
            is_discharge_summary=bool(data.get('is_discharge_summary')),
            hour=data.get('t'))


class Episode(object):
    '''One ICU stay.

    :param vitals: ``T x n_vs`` float array (values under the mask are
        ignored)
    :param vitals_missing: ``T x n_vs`` boolean array, `True` = missing
    :param notes: List of :class:`NoteRecord`
    :param labels: Dict keyed by task name: ``mortality`` (0/1),
        ``decompensation`` (length `T`), ``phenotyping`` (length 25)
    '''
    def __init__(self, patient_id, episode_index, admit_time, vitals,
                 vitals_missing, notes, labels, notes_preprocessed=False):
        self.patient_id = patient_id
        self.episode_index = episode_index
        self.admit_time = admit_time
        self.vitals = np.asarray(vitals, dtype=np.float64)
        self.vitals_missing = np.asarray(vitals_missing, dtype=bool)
        self.notes = list(notes)
        self.labels = labels
        self.notes_preprocessed = notes_preprocessed
        self.excluded = False

    def __repr__(self):
        return '<Episode {0} T={1} notes={2}>'.format(self.key, self.length,
                                                      len(self.notes))

    @property
    def key(self):
        return '{0}:{1}'.format(self.patient_id, self.episode_index)

    @property
    def length(self):
        return self.vitals.shape[0]

    @property
    def n_vs(self):
        return self.vitals.shape[1]

    @property
    def notes_by_step(self):
        steps = {}
        for note in self.notes:
            if note.hour is not None:
                steps.setdefault(note.hour, []).append(note)
        return steps

    def notes_at(self, t):
        return [note for note in self.notes if note.hour == t]

    def replace(self, **changes):
        episode = copy.copy(self)
        for name, value in changes.items():
            setattr(episode, name, value)
        return episode

    def to_json(self):
        values = np.where(self.vitals_missing, np.nan, self.vitals)
        return {
            'patient_id': self.patient_id,
            'episode_index': self.episode_index,
            'admit_time': self.admit_time.strftime(_DATETIME),
            'vitals': {
                'dims': list(self.vitals.shape),
                'values': [None if np.isnan(v) else float(v)
                           for v in values.reshape(-1)],
            },
            'vitals_missing': [int(m) for m in
                               self.vitals_missing.reshape(-1)],
            'notes': [note.to_json() for note in self.notes],
            'labels': self.labels,
            'notes_preprocessed': self.notes_preprocessed,
        }

    @classmethod
    def from_json(cls, data):
        dims = tuple(data['vitals']['dims'])
        raw = [np.nan if v is None else v for v in data['vitals']['values']]
        vitals = np.array(raw, dtype=np.float64).reshape(dims)
        missing = np.array(data['vitals_missing'], dtype=bool).reshape(dims)
        return cls(
            patient_id=str(data['patient_id']),
            episode_index=int(data['episode_index']),
            admit_time=datetime.strptime(data['admit_time'], _DATETIME),
            vitals=np.where(missing, 0.0, vitals),
            vitals_missing=missing,
            notes=[NoteRecord.from_json(n) for n in data['notes']],
            labels=data['labels'],
            notes_preprocessed=bool(data.get('notes_preprocessed')))


def note_hour(note, admit_time):
    '''Hours since admission, floored; notes before admission map to 0.'''
    seconds = (note.chart_time - admit_time).total_seconds()
    return max(0, int(seconds // 3600))


def preprocess_notes(episode):
    '''Apply the note rules and bucket notes to the hourly grid.

    1. Notes without a chart time are timed at the end of their chart date.
    2. Discharge summaries are removed.
    3. The chronologically last remaining note is removed.

    Notes at or after hour `T` are dropped. An episode left without notes is
    flagged through its `excluded` attribute. Already preprocessed episodes
    are returned unchanged.

    :type episode: :class:`Episode`
    :rtype: :class:`Episode`
    '''
    if episode.notes_preprocessed:
        return episode
    notes = []
    for note in episode.notes:
        if note.chart_time is None:
            note = note.replace(
                chart_time=datetime.combine(note.chart_date, END_OF_DAY))
        if not note.is_discharge_summary:
            notes.append(note)
    if notes:
        last = max(range(len(notes)), key=lambda i: (notes[i].chart_time, i))
        del notes[last]
    excluded = not notes
    bucketed = []
    for note in notes:
        hour = note_hour(note, episode.admit_time)
        if hour < episode.length:
            bucketed.append(note.replace(hour=hour))
    result = episode.replace(notes=bucketed, notes_preprocessed=True)
    result.excluded = excluded
    if excluded:
        logger.debug('%s has no notes left after preprocessing', episode.key)
    return result


def split_of(patient_id, split_seed=0):
    '''Split name of a patient, a pure function of id and seed.'''
    digest = hashlib.sha256('{0}\x00{1}'.format(split_seed, patient_id)
                            .encode('utf-8')).digest()
    u = int.from_bytes(digest[:8], 'big') / float(2 ** 64)
    if u < SPLIT_FRACTIONS[0]:
        return 'train'
    if u < SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]:
        return 'val'
    return 'test'


class EpisodeValidator(object):
    def __init__(self, episode):
        self.episode = episode
        self.template = 'Episode "{0}" error: {1}'.format(episode.key, '{0}')

    def _raise(self, msg):
        raise ValidationError(self.template.format(msg))

    def validate(self, task=None, window=MORTALITY_WINDOW):
        episode = self.episode
        if episode.vitals.ndim != 2 or episode.length < 1:
            self._raise('vitals must be a T x n_vs matrix with T >= 1, got '
                        'shape {0}'.format(episode.vitals.shape))
        if episode.vitals_missing.shape != episode.vitals.shape:
            self._raise('mask shape {0} differs from vitals shape {1}'.format(
                episode.vitals_missing.shape, episode.vitals.shape))
        present = ~episode.vitals_missing
        if not np.all(np.isfinite(episode.vitals[present])):
            self._raise('observed vitals must be finite')
        if task is not None:
            self.validate_labels(TaskKind.parse(task), window)

    def validate_labels(self, task, window=MORTALITY_WINDOW):
        labels = self.episode.labels.get(task.value)
        if labels is None:
            self._raise('no {0} label'.format(task.value))
        if task is TaskKind.MORTALITY:
            if labels not in (0, 1):
                self._raise('mortality label must be 0 or 1')
            if self.episode.length < window:
                self._raise('mortality needs {0} steps, episode has {1}'
                            .format(window, self.episode.length))
            return
        expected = (self.episode.length if task is TaskKind.DECOMPENSATION
                    else PHENOTYPE_COUNT)
        if len(labels) != expected:
            self._raise('{0} labels have length {1}, expected {2}'.format(
                task.value, len(labels), expected))
        if any(y not in (0, 1) for y in labels):
            self._raise('{0} labels must be 0 or 1'.format(task.value))


class Dataset(object):
    '''Episodes split by patient, plus the concept files of the directory.'''
    def __init__(self, train=(), val=(), test=(), vocabulary=None,
                 edges=None, rejections=(), task=None):
        self.train = list(train)
        self.val = list(val)
        self.test = list(test)
        self.vocabulary = vocabulary
        self.edges = set(edges or ())
        self.rejections = list(rejections)
        self.task = task

    def __repr__(self):
        return '<Dataset train={0} val={1} test={2} rejected={3}>'.format(
            len(self.train), len(self.val), len(self.test),
            len(self.rejections))

    def split(self, name):
        if name not in SPLITS:
            raise ValidationError('Unknown split "{0}"'.format(name))
        return getattr(self, name)

    def episodes(self):
        return self.train + self.val + self.test

    @property
    def n_vs(self):
        episodes = self.episodes()
        return episodes[0].n_vs if episodes else 0

    def find(self, episode_id):
        '''Episode by ``"patient_id:index"`` or by patient id alone.'''
        for episode in self.episodes():
            if episode_id in (episode.key, episode.patient_id):
                return episode
        raise ValidationError('No episode "{0}"'.format(episode_id))

    def replace_split(self, name, episodes):
        dataset = copy.copy(self)
        setattr(dataset, name, list(episodes))
        return dataset


def write_episodes(path, episodes):
    with codecs.open(path, 'w', 'utf-8') as f:
        for episode in episodes:
            f.write(json.dumps(episode.to_json(), sort_keys=True))
            f.write('\n')


def read_episodes(path):
    episodes = []
    with codecs.open(path, 'r', 'utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                episodes.append(Episode.from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise DataFormatError(path, line_no, 'malformed episode: {0}'
                                      .format(e))
    return episodes


def write_dataset(directory, episodes, vocabulary=None, edges=None):
    '''Write episodes (and optionally the concept files) to `directory`.'''
    if not os.path.isdir(directory):
        os.makedirs(directory)
    write_episodes(os.path.join(directory, EPISODES_FILE), episodes)
    if vocabulary is not None:
        vocabulary.save(os.path.join(directory, VOCABULARY_FILE))
    if edges is not None:
        save_edges(os.path.join(directory, EDGES_FILE), edges)
    logger.info('Wrote %d episodes to %s', len(episodes), directory)


def load_dataset(path, task=None, split_seed=0, window=MORTALITY_WINDOW):
    '''Load, validate, preprocess and split a dataset directory.

    Episodes failing validation or left without notes are listed in the
    `rejections` of the result instead of being loaded.

    :param path: Dataset directory
    :param task: Task whose labels must be present, `None` to skip
    :param split_seed: Seed of the patient hash split
    :rtype: :class:`Dataset`
    '''
    episodes_path = os.path.join(path, EPISODES_FILE)
    if not os.path.isfile(episodes_path):
        raise ValidationError('Empty dataset: no {0} in {1}'
                              .format(EPISODES_FILE, path))
    episodes = read_episodes(episodes_path)
    if not episodes:
        raise ValidationError('Empty dataset: {0} has no episodes'
                              .format(episodes_path))
    splits = dict((name, []) for name in SPLITS)
    rejections = []
    for episode in episodes:
        try:
            EpisodeValidator(episode).validate(task, window)
        except ValidationError as e:
            rejections.append((episode.key, str(e)))
            continue
        episode = preprocess_notes(episode)
        if episode.excluded:
            rejections.append((episode.key, 'no notes after preprocessing'))
            continue
        splits[split_of(episode.patient_id, split_seed)].append(episode)
    vocabulary_path = os.path.join(path, VOCABULARY_FILE)
    edges_path = os.path.join(path, EDGES_FILE)
    dataset = Dataset(
        vocabulary=(Vocabulary.load(vocabulary_path)
                    if os.path.isfile(vocabulary_path) else None),
        edges=(load_edges(edges_path) if os.path.isfile(edges_path)
               else None),
        rejections=rejections, task=task, **splits)
    for key, reason in rejections:
        logger.debug('Rejected %s: %s', key, reason)
    logger.info('Loaded %r from %s', dataset, path)
    return dataset
