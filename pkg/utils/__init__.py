# Utils package for run sessions and report files
