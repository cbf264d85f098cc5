from setuptools import setup, find_packages

exec(open('./semilsd/version.py').read())

setup(
    name='semilsd',
    author='Magnus Watn',
    description='Semi-supervised line segment detection',
    long_description='Command-line program and library for training line segment detectors '
                     'from a few labeled and many unlabeled images',
    version=__version__,
    license='MIT',
    packages=find_packages(exclude=['tests', 'tests.*']),
    install_requires=[
        'torch',
        'torchvision',
        'numpy',
        'scipy',
        'opencv-python-headless',
        ],
    entry_points={
        'console_scripts': [
            'semilsd = semilsd.main:main',
        ],
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'Operating System :: POSIX :: Linux',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Image Recognition',
        ],
)
