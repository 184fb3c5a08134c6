'''Exceptions raised by :mod:`kgicu`.

Every error raised on purpose by this package derives from |KgIcuError|, so
callers that only care whether something in the pipeline went wrong can catch
a single type.

.. |KgIcuError| replace:: :class:`~.KgIcuError`

'''


class KgIcuError(Exception):
    '''All :mod:`kgicu` exceptions are of this type.'''
    pass


class DomainError(KgIcuError):
    '''An operation received an input outside of its domain (e.g. no rows).'''
    pass


class ContractError(KgIcuError):
    '''A caller broke a documented precondition.'''
    pass


class ShapeError(ContractError):
    '''Operand dimensions are not conformable for an operation.'''
    pass


class TapeStateError(KgIcuError):
    '''The autodiff tape was used in a state that does not allow it.'''
    pass


class OracleError(KgIcuError):
    '''The gradient oracle could not produce a trustworthy answer.'''
    pass


class ConfigurationError(KgIcuError):
    '''A configuration value or a configuration file is invalid.'''
    pass


class InputError(KgIcuError):
    '''Input data carries values the model cannot consume.'''
    pass


class TaskEligibilityError(KgIcuError):
    '''An episode does not qualify for the requested prediction task.'''
    pass


class UndefinedMetricError(KgIcuError):
    '''A metric is undefined for the given labels.

    :param metric: Name of the metric that could not be computed
    :type metric: str
    '''
    def __init__(self, metric, reason):
        self.metric = metric
        super(UndefinedMetricError, self).__init__(
            '{0} is undefined: {1}'.format(metric, reason))


class CapabilityError(KgIcuError):
    '''A model lacks the capability an operation needs.'''
    pass


class DataFormatError(KgIcuError):
    '''A data file is malformed. The message names the file and line.'''
    def __init__(self, path, line_no, reason):
        self.path = path
        self.line_no = line_no
        super(DataFormatError, self).__init__(
            '{0}:{1}: {2}'.format(path, line_no, reason))


class ValidationError(KgIcuError):
    '''A loaded object violates one of its invariants.'''
    pass
