import codecs
import os
from setuptools import setup, find_packages

HERE = os.path.abspath(os.path.dirname(__file__))

# Get __version__
exec(open('kgicu/version.py').read())


def read(*parts):
    # Build an absolute path from *parts* and and return the contents of the
    # resulting file.  Assume UTF-8 encoding.
    with codecs.open(os.path.join(HERE, *parts), "rb", "utf-8") as f:
        return f.read()


setup(
    name='kgicu',
    version=__version__,
    description='Knowledge-enhanced multi-modal ICU outcome prediction',
    license='MIT',
    long_description=read('README.rst'),
    long_description_content_type="text/x-rst",
    packages=find_packages(exclude=['test']),
    zip_safe=False,
    install_requires=['numpy', 'matplotlib'],
    entry_points={
        'console_scripts': ['kgicu = kgicu.cli:main'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'Intended Audience :: Healthcare Industry',
        'Natural Language :: English',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
    ],
    setup_requires=['pytest-runner'],
    tests_require=['pytest', 'pytest-cov', 'mock', 'scikit-learn'],
    keywords='icu mortality decompensation phenotyping knowledge graph gnn '
             'lstm autodiff',
)
