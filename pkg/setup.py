from setuptools import find_packages, setup

with open('README.md', 'r') as readme:
    long_description = readme.read()

setup(
    name='balanced_pod_tools',
    package_dir={"": "src"},
    packages=['balanced_pod_tools'],
    version='0.1.0',
    description='Balanced POD reduced-order models and compensators for unstable linear and nonlinear plants.',
    long_description=long_description,
    license='Apache 2.0',
    python_requires='>=3.9',
    install_requires=['dask>=2.20.0', 'numpy', 'pandas', 'python-dotenv', 'pyyaml', 'scipy>=1.12'],
    entry_points={'console_scripts': ['bpod = balanced_pod_tools.cli:main']},
)
