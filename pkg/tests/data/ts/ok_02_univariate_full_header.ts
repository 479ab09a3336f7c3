# comment lines are ignored
@problemName FullHeader
@timeStamps false
@missing false
@univariate true
@equalLength true
@seriesLength 4
@classLabel true a b c
@data
0.5,-1.25,3e-3,7:a
1,1,1,1:c
-2.5,0,0,10:b
