from setuptools import setup, find_packages

LONG_DESCR = open('README.md').read()
LICENSE = open('license.txt', encoding='utf8').read()

setup(
    name='knockon',
    setup_requires='setuptools',
    packages=find_packages(include=['knockon', 'knockon.*']),
    install_requires=[
        'numpy',
        'scipy',
        'tqdm',
        'pandas>=2.0',
        'scikit-learn',
        'matplotlib',
        'seaborn',
        'joblib',
        'torch',
        'pyyaml',
        'networkx',
        'pytest'
    ],
    entry_points={
        'console_scripts': ['knockon=knockon.runner:main'],
    },
    description='Event graph attention pipeline for forecasting knock-on train delays',
    long_description=LONG_DESCR,
    long_description_content_type='text/markdown',
    author='Wyss Center for Bio and Neuro Engineering',
    license=LICENSE,
    classifiers=[
        'Development Status :: 1 - Planning',
        'Intended Audience :: Developers',
        'Programming Language :: Python :: 3'
    ],
    keywords='railway, delay, propagation, forecasting, graph attention, event graph, hurdle model',
)
