@problemName NoLabels
@univariate true
@data
1,2,3:0
